"""Depth-limited octree geometry codec used as the rate-distortion anchor.

Each visited node emits one occupancy byte: bit ``4x + 2y + z`` (MSB
first, so child 0 maps to 0x80) is set when the corresponding octant
contains at least one occupied voxel. Traversal is breadth-first and
stops after ``depth`` subdivision levels; the byte string is then
DEFLATE-compressed. Decoding reconstructs one point per occupied leaf
cell at the (floored) cell center, so full depth is lossless and lower
depths shrink the point count geometrically.

Stream layout: magic "PCGO" | version u8 | r u16 | depth u8 |
payload_len u32 | DEFLATE payload (little-endian).
"""

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bitstream import deflate, inflate
from .errors import CorruptionError, DataError
from .geometry import PointCloud, VoxelGrid
from .validation import check_resolution

MAGIC = b"PCGO"
VERSION = 1
_HEADER = struct.Struct("<4sBHBI")


@dataclass
class OctreeStream:
    """Compressed breadth-first occupancy bytes plus grid metadata."""

    resolution: int
    depth: int
    payload: bytes

    @property
    def total_bytes(self) -> int:
        return _HEADER.size + len(self.payload)

    def to_bytes(self) -> bytes:
        return _HEADER.pack(
            MAGIC, VERSION, self.resolution, self.depth, len(self.payload)
        ) + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "OctreeStream":
        if len(blob) < _HEADER.size:
            raise CorruptionError("octree stream shorter than its header")
        magic, version, r, depth, plen = _HEADER.unpack(blob[: _HEADER.size])
        if magic != MAGIC:
            raise CorruptionError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CorruptionError(f"unsupported octree stream version {version}")
        payload = blob[_HEADER.size :]
        if len(payload) != plen:
            raise CorruptionError(
                f"payload length mismatch: header says {plen}, got {len(payload)}"
            )
        return cls(r, depth, payload)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "OctreeStream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_depth(r: int, depth: int) -> int:
    max_depth = int(r).bit_length() - 1  # log2 for powers of two
    if not 1 <= depth <= max_depth:
        raise DataError(f"depth must lie in [1, {max_depth}] for r={r}, got {depth}")
    return depth


def octree_encode(grid: VoxelGrid, depth: int) -> OctreeStream:
    """Breadth-first occupancy-byte serialization down to *depth* levels."""
    r = check_resolution(grid.resolution, power_of_two=True)
    depth = _check_depth(r, depth)
    if grid.occupied_count == 0:
        raise DataError("cannot octree-encode an empty grid")

    out = bytearray()
    # queue entries: (origin, size, occupied coords inside the cell)
    queue = deque([(np.zeros(3, np.int64), r, grid.coords.astype(np.int64))])
    level_left = 1  # nodes remaining at the current level
    level_next = 0
    level = 0
    while queue:
        origin, size, coords = queue.popleft()
        half = size // 2
        octant = (
            ((coords[:, 0] - origin[0]) >= half).astype(np.int8) * 4
            + ((coords[:, 1] - origin[1]) >= half).astype(np.int8) * 2
            + ((coords[:, 2] - origin[2]) >= half).astype(np.int8)
        )
        byte = 0
        for child in range(8):
            mask = octant == child
            if not mask.any():
                continue
            byte |= 0x80 >> child
            if level + 1 < depth:
                offset = origin + half * np.array(
                    [(child >> 2) & 1, (child >> 1) & 1, child & 1], np.int64
                )
                queue.append((offset, half, coords[mask]))
                level_next += 1
        out.append(byte)
        level_left -= 1
        if level_left == 0:
            level += 1
            level_left = level_next
            level_next = 0
    return OctreeStream(r, depth, deflate(bytes(out)))


def octree_decode(stream: OctreeStream) -> PointCloud:
    """Rebuild leaf-cell centers, sorted lexicographically (z fastest)."""
    r = check_resolution(stream.resolution, power_of_two=True)
    depth = _check_depth(r, stream.depth)
    data = inflate(stream.payload)
    pos = 0
    queue = deque([(0, 0, 0, r, 0)])  # x, y, z, size, level
    leaves = []
    while queue:
        x, y, z, size, level = queue.popleft()
        if pos >= len(data):
            raise CorruptionError("octree payload exhausted before traversal ended")
        byte = data[pos]
        pos += 1
        half = size // 2
        for child in range(8):
            if not byte & (0x80 >> child):
                continue
            cx = x + half * ((child >> 2) & 1)
            cy = y + half * ((child >> 1) & 1)
            cz = z + half * (child & 1)
            if level + 1 < depth:
                queue.append((cx, cy, cz, half, level + 1))
            else:
                leaves.append((cx, cy, cz))
    if pos != len(data):
        raise CorruptionError(
            f"octree payload has {len(data) - pos} trailing bytes"
        )
    if not leaves:
        raise CorruptionError("octree stream decodes to no occupied cells")
    cell = r >> depth
    pts = np.asarray(leaves, dtype=np.int64)
    centers = pts + (cell - 1) // 2
    order = np.lexsort((centers[:, 2], centers[:, 1], centers[:, 0]))
    return PointCloud(centers[order].astype(np.float32))
