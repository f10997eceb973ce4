import numpy as np
import pytest

from pcgc import (
    DataError,
    PointCloud,
    TriangleMesh,
    VoxelGrid,
    devoxelize,
    estimate_normals,
    sample_surface,
    voxelize,
)


def tri(a, b, c):
    return TriangleMesh(np.array([a, b, c], dtype=np.float64), np.array([[0, 1, 2]]))


class TestSampleSurface:
    def test_zero_points_gives_empty_cloud(self, unit_cube_mesh):
        pc = sample_surface(unit_cube_mesh, 0, seed=1)
        assert len(pc) == 0

    def test_points_lie_in_triangle_plane(self):
        # oracle: barycentric reconstruction must satisfy the plane equation
        # and have non-negative coefficients summing to <= 1
        mesh = tri([0, 0, 0], [2, 0, 0], [0, 3, 0])
        pc = sample_surface(mesh, 100_000, seed=1)
        pts = pc.points.astype(np.float64)
        assert np.abs(pts[:, 2]).max() < 1e-6
        u = pts[:, 0] / 2.0
        v = pts[:, 1] / 3.0
        assert (u >= -1e-6).all() and (v >= -1e-6).all()
        assert (u + v <= 1 + 1e-6).all()

    def test_area_proportional_selection(self):
        # 3:1 area ratio; multinomial expectation puts 75% on the big face
        verts = np.array(
            [[0, 0, 0], [3, 0, 0], [0, 2, 0], [10, 0, 0], [11, 0, 0], [10, 2, 0]],
            dtype=np.float64,
        )
        faces = np.array([[0, 1, 2], [3, 4, 5]])  # areas 3 and 1
        mesh = TriangleMesh(verts, faces)
        n = 100_000
        pc = sample_surface(mesh, n, seed=7)
        big = np.count_nonzero(pc.points[:, 0] < 5)
        assert abs(big / n - 0.75) < 0.01

    def test_same_seed_is_bitwise_deterministic(self, unit_cube_mesh):
        a = sample_surface(unit_cube_mesh, 5000, seed=42)
        b = sample_surface(unit_cube_mesh, 5000, seed=42)
        assert np.array_equal(a.points, b.points)

    def test_degenerate_mesh_rejected(self):
        mesh = tri([0, 0, 0], [1, 1, 1], [2, 2, 2])  # zero area
        with pytest.raises(DataError):
            sample_surface(mesh, 10, seed=0)


class TestVoxelize:
    def test_corner_mapping_r2(self):
        pc = PointCloud(np.array([[0, 0, 0], [1, 1, 1]], dtype=np.float32))
        grid = voxelize(pc, 2)
        assert grid.coords.tolist() == [[0, 0, 0], [1, 1, 1]]

    def test_duplicates_collapse(self):
        pc = PointCloud(np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]], np.float32))
        assert voxelize(pc, 8).occupied_count == 1

    def test_line_occupies_every_cell(self):
        # oracle: enumerate the rounded positions directly
        xs = np.linspace(0.0, 1.0, 1000)
        pts = np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1)
        grid = voxelize(PointCloud(pts.astype(np.float32)), 64)
        expected = np.unique(np.rint(xs.astype(np.float64) * 63).astype(int))
        assert grid.occupied_count == 64
        assert np.array_equal(np.unique(grid.coords[:, 0]), expected)

    def test_empty_cloud_rejected(self):
        with pytest.raises(DataError):
            voxelize(PointCloud(np.zeros((0, 3), np.float32)), 8)

    def test_scale_and_translation_invariance(self, rng):
        pts = rng.random((200, 3)).astype(np.float32)
        base = voxelize(PointCloud(pts), 32)
        for scale, shift in [(2.0, 5.0), (0.25, -3.0), (10.0, 100.0)]:
            moved = voxelize(PointCloud(pts * scale + shift), 32)
            assert moved == base

    def test_revoxelization_idempotent(self, rng):
        grid = voxelize(PointCloud(rng.random((300, 3)).astype(np.float32)), 16)
        again = voxelize(devoxelize(grid), 16)
        assert again == grid

    def test_single_point_goes_to_center(self):
        pc = PointCloud(np.array([[3.3, 3.3, 3.3]], np.float32))
        grid = voxelize(pc, 9)
        assert grid.coords.tolist() == [[4, 4, 4]]


class TestDevoxelize:
    def test_empty(self):
        assert len(devoxelize(VoxelGrid(8))) == 0

    def test_single_voxel(self):
        grid = VoxelGrid(8, np.array([[3, 4, 5]]))
        assert devoxelize(grid).points.tolist() == [[3.0, 4.0, 5.0]]

    def test_lexicographic_order_z_fastest(self):
        grid = VoxelGrid(4, np.array([[1, 0, 1], [0, 1, 0], [1, 0, 0], [0, 0, 2]]))
        pts = devoxelize(grid).points
        assert pts.tolist() == [[0, 0, 2], [0, 1, 0], [1, 0, 0], [1, 0, 1]]


class TestEstimateNormals:
    def test_plane_z0(self, rng):
        pts = np.zeros((80, 3), np.float32)
        pts[:, :2] = rng.random((80, 2)).astype(np.float32) * 10
        out = estimate_normals(PointCloud(pts), k=8)
        assert np.abs(out.normals - [0.0, 0.0, 1.0]).max() < 1e-6

    def test_diagonal_plane(self, rng):
        # points on x=y: normal is (1,-1,0)/sqrt(2) after the sign rule
        t = rng.random((60, 2)) * 5
        pts = np.stack([t[:, 0], t[:, 0], t[:, 1]], axis=1).astype(np.float32)
        out = estimate_normals(PointCloud(pts), k=8)
        want = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        assert np.abs(out.normals - want).max() < 1e-6

    def test_too_few_points(self):
        pc = PointCloud(np.zeros((5, 3), np.float32))
        with pytest.raises(DataError):
            estimate_normals(pc, k=8)

    def test_normals_are_unit(self, rng):
        pts = rng.random((50, 3)).astype(np.float32)
        out = estimate_normals(PointCloud(pts), k=5)
        norms = np.linalg.norm(out.normals.astype(np.float64), axis=1)
        assert np.abs(norms - 1).max() < 1e-6


class TestVoxelGrid:
    def test_dense_roundtrip(self, rng):
        grid = VoxelGrid(8, rng.integers(0, 8, (30, 3)))
        assert VoxelGrid.from_dense(grid.to_dense()) == grid

    def test_out_of_range_coords_rejected(self):
        with pytest.raises(DataError):
            VoxelGrid(4, np.array([[0, 0, 4]]))

    def test_invariant_no_nan_points(self):
        with pytest.raises(DataError):
            PointCloud(np.array([[0.0, np.nan, 0.0]], np.float32))

    def test_normals_must_be_unit(self):
        with pytest.raises(DataError):
            PointCloud(
                np.zeros((1, 3), np.float32), np.array([[1.0, 1.0, 0.0]], np.float32)
            )
