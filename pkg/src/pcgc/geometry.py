"""Point clouds, triangle meshes, voxel grids, and the conversions between them.

Coordinate conventions: a voxel grid of resolution ``r`` covers the integer
lattice ``[0, r-1]^3`` (``r`` cells per axis). Voxelization maps a cloud's
bounding box onto that lattice with a single uniform scale factor, so the
largest box extent spans the full axis and the others are centered.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, SchemaError, ShapeError
from .validation import check_normals, check_points, check_resolution


@dataclass
class PointCloud:
    """Ordered list of 3D points with optional unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = check_points(self.points)
        if self.normals is not None:
            self.normals = check_normals(self.normals, len(self.points))

    def __len__(self):
        return self.points.shape[0]

    @property
    def has_normals(self):
        return self.normals is not None


@dataclass
class TriangleMesh:
    """Indexed triangle soup. Zero-area triangles are allowed."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = check_points(self.vertices, name="vertices")
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ShapeError(f"faces must have shape (m, 3), got {self.faces.shape}")
        n = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            bad = self.faces[(self.faces < 0) | (self.faces >= n)]
            raise SchemaError(
                f"face index {int(bad.flat[0])} out of range for {n} vertices"
            )

    def triangle_areas(self):
        """Per-face area via the cross-product formula (float64)."""
        v = self.vertices.astype(np.float64)
        a = v[self.faces[:, 0]]
        b = v[self.faces[:, 1]]
        c = v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _canonical_coords(coords, r):
    """Deduplicate and sort occupied coordinates lexicographically (z fastest)."""
    coords = np.ascontiguousarray(coords, dtype=np.int32)
    if coords.size == 0:
        return coords.reshape(0, 3)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeError(f"coords must have shape (n, 3), got {coords.shape}")
    if coords.min() < 0 or coords.max() > r - 1:
        raise DataError(f"occupied coordinates must lie in [0, {r - 1}]^3")
    coords = np.unique(coords, axis=0)  # unique sorts rows lexicographically
    return coords


@dataclass
class VoxelGrid:
    """Binary occupancy over the r*r*r lattice, stored as sorted coordinates."""

    resolution: int
    coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int32))

    def __post_init__(self):
        self.resolution = check_resolution(self.resolution)
        self.coords = _canonical_coords(self.coords, self.resolution)

    @property
    def occupied_count(self):
        return self.coords.shape[0]

    def to_dense(self, dtype=np.float32):
        """Dense (r, r, r) occupancy array."""
        r = self.resolution
        dense = np.zeros((r, r, r), dtype=dtype)
        if self.coords.size:
            dense[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = 1
        return dense

    @classmethod
    def from_dense(cls, dense, threshold=0.5):
        dense = np.asarray(dense)
        if dense.ndim != 3 or len(set(dense.shape)) != 1:
            raise ShapeError(f"dense grid must be cubic (r, r, r), got {dense.shape}")
        coords = np.argwhere(dense >= threshold).astype(np.int32)
        return cls(dense.shape[0], coords)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(
            self.coords, other.coords
        )


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Draw *n* points area-uniformly from the mesh surface.

    Triangles are chosen with probability proportional to their area, the
    point inside a triangle via barycentric coordinates (u, v) reflected so
    u + v <= 1. Bitwise deterministic for a fixed seed.
    """
    if n < 0:
        raise DataError(f"sample count must be >= 0, got {n}")
    if n == 0:
        return PointCloud(np.zeros((0, 3), np.float32))
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise DataError("mesh has no positive-area triangle to sample from")
    rng = np.random.Generator(np.random.PCG64(seed))
    tri_idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    verts = mesh.vertices.astype(np.float64)
    a = verts[mesh.faces[tri_idx, 0]]
    b = verts[mesh.faces[tri_idx, 1]]
    c = verts[mesh.faces[tri_idx, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(pts.astype(np.float32))


def voxelize(pc: PointCloud, r: int) -> VoxelGrid:
    """Map a cloud's bounding box to the [0, r-1]^3 lattice.

    Uses one uniform scale (largest extent fills the axis), centers the
    remaining axes, and rounds ties-to-even. Duplicate hits collapse.
    """
    r = check_resolution(r)
    if len(pc) == 0:
        raise DataError("cannot voxelize an empty cloud (no bounding box)")
    pts = pc.points.astype(np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = hi - lo
    largest = extent.max()
    if largest > 0:
        scale = (r - 1) / largest
        offset = ((r - 1) - extent * scale) / 2.0
        mapped = (pts - lo) * scale + offset
    else:
        mapped = np.full_like(pts, (r - 1) / 2.0)
    coords = np.rint(mapped).astype(np.int32)
    np.clip(coords, 0, r - 1, out=coords)
    return VoxelGrid(r, coords)


def devoxelize(grid: VoxelGrid) -> PointCloud:
    """One point per occupied voxel, in lexicographic order (z fastest)."""
    return PointCloud(grid.coords.astype(np.float32))


def estimate_normals(pc: PointCloud, k: int = 9) -> PointCloud:
    """Per-point normals from local PCA over the k nearest neighbors.

    The normal is the eigenvector of the smallest covariance eigenvalue;
    its sign is fixed so the largest-magnitude component is non-negative.
    """
    if k < 3:
        raise DataError(f"neighbor count must be >= 3, got {k}")
    n = len(pc)
    if n < k + 1:
        raise DataError(f"need at least {k + 1} points to estimate normals, have {n}")
    pts = pc.points.astype(np.float64)
    tree = cKDTree(pts)
    # k nearest neighbors excluding the query point itself
    _, idx = tree.query(pts, k=k + 1)
    neighbors = pts[idx[:, 1:]]  # (n, k, 3)
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # eigh sorts eigenvalues ascending
    # orient: largest-|component| must be non-negative; near-ties (within
    # 1e-6 relative) break to the smallest index so planar data is stable
    mags = np.abs(normals)
    peak = mags.max(axis=1, keepdims=True)
    comp = np.argmax(mags >= peak * (1.0 - 1e-6), axis=1)
    signs = np.sign(normals[np.arange(n), comp])
    signs[signs == 0] = 1.0
    normals = normals * signs[:, None]
    return PointCloud(pc.points.copy(), normals.astype(np.float32))
