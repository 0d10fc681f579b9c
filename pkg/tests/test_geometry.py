import math
import unittest

import numpy as np
import torch

from xmseg.errors import InvalidArgumentError, OutOfRangeError
from xmseg.geometry import (
    Augment2DParams,
    Augment3DParams,
    CameraIntrinsics,
    ColorJitter,
    Crop,
    PixelCoords,
    PointCloud,
    RigidTransform,
    augment_2d,
    augment_3d,
    project_points,
    sample_features,
    unproject_points,
    voxelize,
)


class TestProjection(unittest.TestCase):
    def setUp(self):
        self.intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
        self.identity = RigidTransform.identity()

    def test_principal_point(self):
        coords = project_points(PointCloud([[0.0, 0.0, 7.0]]), self.identity, self.intr)
        self.assertTrue(coords.mask[0])
        np.testing.assert_allclose(coords.uv[0], (50.0, 50.0))

    def test_behind_camera(self):
        coords = project_points(PointCloud([[0.0, 0.0, -1.0]]), self.identity, self.intr)
        self.assertFalse(coords.mask[0])
        self.assertTrue(np.isnan(coords.uv[0]).all())

    def test_pinhole_formula(self):
        coords = project_points(PointCloud([[1.0, 0.0, 10.0]]), self.identity, self.intr)
        np.testing.assert_allclose(coords.uv[0], (60.0, 50.0))

    def test_outside_image_is_masked(self):
        coords = project_points(PointCloud([[10.0, 0.0, 1.0]]), self.identity, self.intr)
        self.assertFalse(coords.mask[0])

    def test_non_orthonormal_extrinsic(self):
        skewed = RigidTransform(np.diag([1.0, 2.0, 1.0]), np.zeros(3))
        with self.assertRaises(InvalidArgumentError):
            project_points(PointCloud([[0.0, 0.0, 1.0]]), skewed, self.intr)

    def test_unproject_round_trip(self):
        rng = np.random.default_rng(3)
        yaw = 0.3
        rotation = np.array(
            [[math.cos(yaw), 0.0, math.sin(yaw)], [0.0, 1.0, 0.0], [-math.sin(yaw), 0.0, math.cos(yaw)]]
        )
        extrinsic = RigidTransform(rotation, np.array([0.1, -0.2, 0.3]))
        points = np.column_stack(
            [rng.uniform(-3, 3, 200), rng.uniform(-3, 3, 200), rng.uniform(2, 30, 200)]
        )

        coords = project_points(points, extrinsic, self.intr)
        self.assertGreater(coords.mask.sum(), 50)
        recovered = unproject_points(coords, extrinsic, self.intr)
        np.testing.assert_allclose(recovered, points[coords.mask], atol=1e-6)


class TestSampleFeatures(unittest.TestCase):
    def test_constant_map(self):
        fmap = np.full((6, 8, 3), 2.5)
        uv = np.array([[0.0, 0.0], [3.7, 2.2], [7.4, 5.4]])
        for mode in ("nearest", "bilinear"):
            np.testing.assert_array_equal(sample_features(fmap, uv, mode), np.full((3, 3), 2.5))

    def test_nearest_on_lattice(self):
        fmap = np.arange(4 * 5 * 2, dtype=np.float64).reshape(4, 5, 2)
        uv = np.array([[0.0, 0.0], [4.0, 3.0], [2.0, 1.0]])
        np.testing.assert_array_equal(
            sample_features(fmap, uv, "nearest"), fmap[[0, 3, 1], [0, 4, 2]]
        )

    def test_nearest_equals_bilinear_on_lattice(self):
        fmap = np.random.default_rng(0).random((5, 6, 4))
        uv = np.array([[u, v] for u in range(6) for v in range(5)], dtype=np.float64)
        np.testing.assert_array_equal(
            sample_features(fmap, uv, "nearest"), sample_features(fmap, uv, "bilinear")
        )

    def test_bilinear_midpoint(self):
        fmap = np.array([[[0.0], [1.0]]])
        np.testing.assert_allclose(sample_features(fmap, np.array([[0.5, 0.0]]), "bilinear"), [[0.5]])

    def test_nearest_tie_goes_to_lower_index(self):
        fmap = np.array([[[0.0], [1.0]]])
        self.assertEqual(float(sample_features(fmap, np.array([[0.5, 0.0]]), "nearest")[0, 0]), 0.0)

    def test_masked_rows_only(self):
        fmap = np.arange(6, dtype=np.float64).reshape(2, 3, 1)
        coords = PixelCoords([[0.0, 0.0], [np.nan, np.nan], [2.0, 1.0]], [True, False, True])
        np.testing.assert_array_equal(sample_features(fmap, coords), [[0.0], [5.0]])

    def test_tolerance(self):
        fmap = np.zeros((4, 4, 1))
        sample_features(fmap, np.array([[-0.4, 3.4]]))
        with self.assertRaises(OutOfRangeError):
            sample_features(fmap, np.array([[4.6, 0.0]]))

    def test_gradients_reach_feature_map(self):
        fmap = torch.zeros((3, 3, 2), dtype=torch.float64, requires_grad=True)
        out = sample_features(fmap, np.array([[0.5, 0.5]]), "bilinear")
        out.sum().backward()
        self.assertAlmostEqual(float(fmap.grad.sum()), 2.0)


class TestVoxelize(unittest.TestCase):
    def test_floor_division(self):
        grid = voxelize(PointCloud([[0.12, -0.03, 0.27]]), 0.05)
        np.testing.assert_array_equal(grid.index.ijk, [[2, -1, 5]])

    def test_colocated_points_share_a_voxel(self):
        grid = voxelize(PointCloud([[0.01, 0.01, 0.01], [0.02, 0.03, 0.04]]), 0.05)
        self.assertEqual(grid.num_voxels, 1)
        np.testing.assert_array_equal(grid.index.ijk[0], grid.index.ijk[1])
        self.assertEqual(grid.representatives.tolist(), [0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        points = rng.uniform(-1, 1, (300, 3))
        perm = rng.permutation(300)

        a = voxelize(points, 0.2)
        b = voxelize(points[perm], 0.2)
        np.testing.assert_array_equal(a.keys, b.keys)
        np.testing.assert_array_equal(b.index.ijk, a.index.ijk[perm])
        np.testing.assert_array_equal(a.keys[a.inverse], a.index.ijk)
        np.testing.assert_array_equal(b.inverse, a.inverse[perm])

    def test_non_finite(self):
        with self.assertRaises(InvalidArgumentError):
            voxelize(PointCloud([[np.nan, 0.0, 0.0]]), 0.05)

    def test_bad_voxel_size(self):
        with self.assertRaises(InvalidArgumentError):
            voxelize(PointCloud([[0.0, 0.0, 0.0]]), 0.0)


class TestAugment3D(unittest.TestCase):
    def setUp(self):
        self.points = np.random.default_rng(2).normal(size=(20, 3))

    def test_full_turn(self):
        out, _ = augment_3d(self.points, Augment3DParams(yaw=2 * math.pi))
        np.testing.assert_allclose(out, self.points, atol=1e-9)

    def test_flip_involution(self):
        once, _ = augment_3d(self.points, Augment3DParams(flip_x=True))
        twice, _ = augment_3d(once, Augment3DParams(flip_x=True))
        np.testing.assert_array_equal(twice, self.points)

    def test_quarter_turn(self):
        out, _ = augment_3d(np.array([[1.0, 0.0, 0.0]]), Augment3DParams(yaw=math.pi / 2))
        np.testing.assert_allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_labels_pass_through(self):
        labels = np.arange(20)
        _, out = augment_3d(self.points, Augment3DParams.sample(np.random.default_rng(0)), labels)
        self.assertIs(out, labels)

    def test_bad_scale(self):
        with self.assertRaises(InvalidArgumentError):
            augment_3d(self.points, Augment3DParams(scale=0.0))


class TestAugment2D(unittest.TestCase):
    def setUp(self):
        self.image = np.random.default_rng(4).random((10, 40, 3)).astype(np.float32)

    def test_flip_involution(self):
        coords = PixelCoords([[3.0, 2.0], [39.0, 9.0], [12.5, 4.0]], [True, True, True])
        flip = Augment2DParams(flip_h=True)
        image, once = augment_2d(self.image, coords, flip)
        np.testing.assert_array_equal(once.uv[:, 0], [36.0, 0.0, 26.5])
        image, twice = augment_2d(image, once, flip)
        np.testing.assert_array_equal(image, self.image)
        np.testing.assert_array_equal(twice.uv, coords.uv)

    def test_crop_shift(self):
        coords = PixelCoords([[25.0, 3.0], [5.0, 3.0]], [True, True])
        image, out = augment_2d(self.image, coords, Augment2DParams(crop=Crop(10, 20)))
        self.assertEqual(image.shape, (10, 20, 3))
        self.assertEqual(out.uv[0, 0], 15.0)
        self.assertEqual(out.mask.tolist(), [True, False])

    def test_identity_jitter(self):
        coords = PixelCoords([[1.0, 1.0]], [True])
        image, _ = augment_2d(self.image, coords, Augment2DParams(jitter=ColorJitter(1.0, 1.0, 1.0)))
        np.testing.assert_array_equal(image, self.image)

    def test_pixels_follow_points(self):
        coords = PixelCoords([[float(u), 5.0] for u in range(40)], [True] * 40)
        params = Augment2DParams(flip_h=True, crop=Crop(7, 24))
        image, out = augment_2d(self.image, coords, params)
        kept = np.flatnonzero(out.mask)
        self.assertEqual(len(kept), 24)
        for i in kept:
            u = int(out.uv[i, 0])
            np.testing.assert_array_equal(image[5, u], self.image[5, i])

    def test_crop_too_wide(self):
        coords = PixelCoords([[1.0, 1.0]], [True])
        with self.assertRaises(InvalidArgumentError):
            augment_2d(self.image, coords, Augment2DParams(crop=Crop(0, 41)))
