"""File formats: PLY point clouds, OFF meshes, and PCGV voxel-grid files.

PLY support covers ASCII and binary little-endian files whose first element
is ``vertex`` with scalar properties including x/y/z (and optionally
nx/ny/nz). Unknown scalar vertex properties are skipped; anything after the
vertex data (e.g. a face element) is ignored on read.

The PCGV container is a sparse dump of occupied voxels:

    magic "PCGV" | version u8 | r u16 | count u32 | count * (x,y,z) u16

All multi-byte integers are little-endian.
"""

import struct

import numpy as np

from .errors import CorruptionError, ParseError, SchemaError
from .geometry import PointCloud, TriangleMesh, VoxelGrid

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_PCGV_MAGIC = b"PCGV"
_PCGV_VERSION = 1


def _read_ply_header(fh):
    """Parse the header, returning (format, vertex_count, fields, lineno)."""
    lineno = 0

    def next_line():
        nonlocal lineno
        raw = fh.readline()
        if not raw:
            raise ParseError(f"unexpected end of PLY header at line {lineno}")
        lineno += 1
        return raw.decode("latin-1").strip()

    if next_line() != "ply":
        raise ParseError("line 1: not a PLY file (missing 'ply' magic)")
    fmt = None
    vertex_count = None
    fields = []
    in_vertex = False
    while True:
        line = next_line()
        if line == "" or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"line {lineno}: unsupported format '{line}'")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: malformed element '{line}'")
            if parts[1] == "vertex":
                try:
                    vertex_count = int(parts[2])
                except ValueError:
                    raise ParseError(f"line {lineno}: bad vertex count '{parts[2]}'")
                in_vertex = True
            else:
                if vertex_count is None:
                    raise SchemaError(
                        f"line {lineno}: element '{parts[1]}' precedes the vertex "
                        f"element; only vertex-first layouts are supported"
                    )
                in_vertex = False
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if parts[1] == "list":
                raise SchemaError(
                    f"line {lineno}: list properties in the vertex element "
                    f"are not supported"
                )
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ParseError(f"line {lineno}: malformed property '{line}'")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"line {lineno}: unrecognized header line '{line}'")
    if fmt is None:
        raise ParseError("PLY header has no format line")
    if vertex_count is None:
        raise SchemaError("PLY header has no vertex element")
    names = [f[0] for f in fields]
    for req in ("x", "y", "z"):
        if req not in names:
            raise SchemaError(f"PLY vertex element is missing property '{req}'")
    return fmt, vertex_count, fields, lineno


def load_point_cloud(path) -> PointCloud:
    """Read a PLY file (ASCII or binary little-endian)."""
    with open(path, "rb") as fh:
        fmt, count, fields, lineno = _read_ply_header(fh)
        names = [f[0] for f in fields]
        if fmt == "ascii":
            rows = []
            for i in range(count):
                raw = fh.readline()
                if not raw:
                    raise ParseError(
                        f"line {lineno + i + 1}: expected {count} vertex rows, "
                        f"found {i}"
                    )
                parts = raw.split()
                if len(parts) != len(fields):
                    raise ParseError(
                        f"line {lineno + i + 1}: expected {len(fields)} values, "
                        f"got {len(parts)}"
                    )
                try:
                    rows.append([float(p) for p in parts])
                except ValueError:
                    raise ParseError(
                        f"line {lineno + i + 1}: non-numeric vertex value"
                    )
            data = np.asarray(rows, dtype=np.float64).reshape(count, len(fields))
            cols = {name: data[:, i] for i, name in enumerate(names)}
        else:
            dtype = np.dtype([(n, "<" + t) for n, t in fields])
            raw = fh.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise ParseError(
                    f"binary vertex data truncated: expected "
                    f"{dtype.itemsize * count} bytes, got {len(raw)}"
                )
            rec = np.frombuffer(raw, dtype=dtype, count=count)
            cols = {n: rec[n] for n in names}
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1) if count else np.zeros((0, 3))
    normals = None
    if all(n in cols for n in ("nx", "ny", "nz")) and count:
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
    return PointCloud(pts.astype(np.float32), normals)


def save_point_cloud(pc: PointCloud, path, binary: bool = False) -> None:
    """Write a PLY file; binary mode round-trips float32 coordinates exactly."""
    names = ["x", "y", "z"]
    data = [pc.points]
    if pc.has_normals:
        names += ["nx", "ny", "nz"]
        data.append(pc.normals)
    table = np.concatenate(data, axis=1).astype(np.float32) if len(pc) else None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(pc)}")
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            if table is None:
                return
            if binary:
                fh.write(np.ascontiguousarray(table, dtype="<f4").tobytes())
            else:
                lines = [" ".join(f"{v:.9g}" for v in row) for row in table]
                fh.write(("\n".join(lines) + "\n").encode("ascii"))
    except OSError as exc:
        raise OSError(f"failed to write point cloud to {path}: {exc}") from exc


def _off_tokens(fh):
    for lineno, raw in enumerate(fh, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for tok in line.split():
            yield lineno, tok


def load_mesh(path) -> TriangleMesh:
    """Read an OFF mesh; polygonal faces are fan-triangulated."""
    with open(path, "r", encoding="latin-1") as fh:
        tokens = _off_tokens(fh)

        def take(what):
            try:
                return next(tokens)
            except StopIteration:
                raise ParseError(f"unexpected end of OFF file while reading {what}")

        lineno, magic = take("magic")
        if magic != "OFF":
            raise ParseError(f"line {lineno}: not an OFF file (magic '{magic}')")
        counts = []
        for what in ("vertex count", "face count", "edge count"):
            lineno, tok = take(what)
            try:
                counts.append(int(tok))
            except ValueError:
                raise ParseError(f"line {lineno}: bad {what} '{tok}'")
        nv, nf, _ = counts
        verts = np.empty((nv, 3), dtype=np.float64)
        for i in range(nv):
            for j in range(3):
                lineno, tok = take(f"vertex {i}")
                try:
                    verts[i, j] = float(tok)
                except ValueError:
                    raise ParseError(f"line {lineno}: bad vertex coordinate '{tok}'")
        tris = []
        for i in range(nf):
            lineno, tok = take(f"face {i}")
            try:
                sides = int(tok)
            except ValueError:
                raise ParseError(f"line {lineno}: bad face size '{tok}'")
            if sides < 3:
                raise SchemaError(f"line {lineno}: face {i} has {sides} vertices")
            idx = []
            for _ in range(sides):
                lineno, tok = take(f"face {i}")
                try:
                    idx.append(int(tok))
                except ValueError:
                    raise ParseError(f"line {lineno}: bad face index '{tok}'")
            for a in range(1, sides - 1):
                tris.append((idx[0], idx[a], idx[a + 1]))
    return TriangleMesh(verts.astype(np.float32), np.asarray(tris, dtype=np.int64))


def save_voxel_grid(grid: VoxelGrid, path) -> None:
    """Write a PCGV file (sparse occupied-coordinate dump)."""
    if grid.resolution > 0xFFFF:
        raise SchemaError("PCGV stores resolution as u16")
    header = _PCGV_MAGIC + struct.pack(
        "<BHI", _PCGV_VERSION, grid.resolution, grid.occupied_count
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.coords, dtype="<u2").tobytes())


def load_voxel_grid(path) -> VoxelGrid:
    """Read a PCGV file written by :func:`save_voxel_grid`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 11 or blob[:4] != _PCGV_MAGIC:
        raise CorruptionError(f"{path}: not a PCGV voxel-grid file")
    version, r, count = struct.unpack("<BHI", blob[4:11])
    if version != _PCGV_VERSION:
        raise CorruptionError(f"{path}: unsupported PCGV version {version}")
    need = 11 + count * 6
    if len(blob) != need:
        raise CorruptionError(
            f"{path}: expected {need} bytes for {count} voxels, got {len(blob)}"
        )
    coords = np.frombuffer(blob, dtype="<u2", offset=11).reshape(count, 3)
    return VoxelGrid(r, coords.astype(np.int32))
