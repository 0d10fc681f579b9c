import dataclasses
import unittest

import numpy as np

from xmseg.classmap import load_class_map
from xmseg.errors import InvalidArgumentError, UnknownNameError
from xmseg.scene import INTRINSICS, PROFILES, generate_scene, get_profile


def _small(name, **changes):
    return dataclasses.replace(PROFILES[name], azimuth_steps=48, **changes)


class TestScene(unittest.TestCase):
    def test_deterministic(self):
        a = generate_scene(_small("day"), INTRINSICS["nuscenes"], 11)
        b = generate_scene(_small("day"), INTRINSICS["nuscenes"], 11)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.points.coords, b.points.coords)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seeds_differ(self):
        a = generate_scene(_small("day"), INTRINSICS["nuscenes"], 11)
        b = generate_scene(_small("day"), INTRINSICS["nuscenes"], 12)
        self.assertFalse(np.array_equal(a.image, b.image))

    def test_paired_sample(self):
        intr = INTRINSICS["nuscenes"]
        s = generate_scene(_small("usa"), intr, 3)
        self.assertGreater(s.num_points, 0)
        self.assertEqual(s.image.shape, (intr.height, intr.width, 3))
        self.assertTrue(((s.image >= 0) & (s.image <= 1)).all())
        self.assertTrue(s.pixel_coords.mask.all())
        uv = s.pixel_coords.uv
        self.assertTrue(((uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1)).all())
        self.assertTrue(((uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1)).all())
        cmap = load_class_map(PROFILES["usa"].class_map)
        self.assertEqual(s.label_map, "nuscenes_to_5cat")
        self.assertTrue(((s.labels >= 0) & (s.labels < len(cmap.source_classes))).all())

    def test_night_shares_layout_but_is_darker(self):
        intr = INTRINSICS["nuscenes"]
        day = generate_scene(_small("day"), intr, 5, domain="source")
        night = generate_scene(_small("night"), intr, 5, domain="target")
        np.testing.assert_array_equal(day.points.coords, night.points.coords)
        np.testing.assert_array_equal(day.labels, night.labels)
        self.assertLess(night.image.mean(), 0.6 * day.image.mean())

    def test_more_beam_layers_more_points(self):
        dense = sum(
            generate_scene(_small("semantic_kitti"), INTRINSICS["semantic_kitti"], s).num_points
            for s in range(3)
        )
        sparse = sum(
            generate_scene(_small("a2d2"), INTRINSICS["a2d2"], s).num_points for s in range(3)
        )
        self.assertGreaterEqual(dense, 2 * sparse)

    def test_bad_profiles(self):
        with self.assertRaises(InvalidArgumentError):
            dataclasses.replace(PROFILES["day"], beam_layers=0)
        with self.assertRaises(InvalidArgumentError):
            dataclasses.replace(PROFILES["day"], illumination_scale=0.0)
        with self.assertRaises(InvalidArgumentError):
            generate_scene(PROFILES["day"], INTRINSICS["nuscenes"], 0, domain="test")
        with self.assertRaises(UnknownNameError):
            get_profile("mars")

    def test_class_map_must_cover_drawn_classes(self):
        with self.assertRaises(InvalidArgumentError):
            dataclasses.replace(PROFILES["a2d2"], class_map="nuscenes_to_5cat")
        s = generate_scene(_small("day"), INTRINSICS["nuscenes"], 7)
        raw_ids = PROFILES["day"].raw_ids()
        self.assertEqual(len(raw_ids[0]), 5)
        self.assertEqual(list(raw_ids[3]), [8, 9])  # traffic_cone, barrier
        self.assertEqual(list(raw_ids[4]), [10])
        self.assertTrue(np.isin(s.labels, np.concatenate(raw_ids)).all())
