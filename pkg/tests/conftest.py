from pathlib import Path

import numpy as np
import pytest

from pcgc import PointCloud, TriangleMesh, VoxelGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def golden_dir():
    return Path(__file__).parent / "golden"


@pytest.fixture
def unit_cube_mesh():
    verts = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float32,
    )
    quads = [
        (0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4),
        (2, 3, 7, 6), (1, 2, 6, 5), (3, 0, 4, 7),
    ]
    tris = []
    for q in quads:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return TriangleMesh(verts, np.asarray(tris))


def random_grid(rng, r=16, n=50):
    coords = rng.integers(0, r, size=(n, 3))
    return VoxelGrid(r, coords)


def sphere_grid(r=32, lo=None, hi=None):
    """Sphere-shell occupancy, a handy non-trivial deterministic grid."""
    idx = np.indices((r, r, r)).reshape(3, -1).T
    c = (r - 1) / 2
    d = np.linalg.norm(idx - c, axis=1)
    lo = r * 0.35 if lo is None else lo
    hi = r * 0.42 if hi is None else hi
    return VoxelGrid(r, idx[(d > lo) & (d < hi)])
