import dataclasses
import os
import shutil
import unittest

import numpy as np

import tests.setup_scenes as setup_scenes
from xmseg.classmap import load_class_map, map_classes
from xmseg.errors import EmptyDataError, InvalidArgumentError, ManifestViolationError, UnknownNameError
from xmseg.split import (
    SPLITS,
    SplitInfo,
    SplitManifest,
    build_split,
    class_frequencies,
    clear_class_frequencies,
    get_scenario,
    load_manifest,
    load_sample,
    make_manifest,
    regenerate_sample,
    sample_id,
    save_sample,
    source_class_frequencies,
    split_dir,
    split_domain,
    to_target_labels,
)
from xmseg.scene import INTRINSICS, generate_scene, get_profile
from xmseg.utilities import scan_dataset_root


class TestManifest(unittest.TestCase):
    def test_seed_ranges_are_disjoint(self):
        manifest = make_manifest("country", {"source_train": 3, "target_val": 2})
        seeds = [seed for name in SPLITS for seed in manifest.splits[name].seeds]
        self.assertEqual(len(seeds), len(set(seeds)))
        self.assertEqual(manifest.splits["source_train"].count, 3)
        self.assertEqual(manifest.classes[0], "vehicle")

    def test_overlapping_splits(self):
        with self.assertRaises(ManifestViolationError):
            SplitManifest(
                "day_night",
                {"source_train": SplitInfo(5, 0), "target_train": SplitInfo(5, 3)},
            )

    def test_dict_round_trip(self):
        manifest = make_manifest("dataset", {"source_train": 2}, {"azimuth_steps": 32}, 0.5)
        again = SplitManifest.from_dict(manifest.to_dict())
        self.assertEqual(again.to_dict(), manifest.to_dict())

    def test_version_mismatch(self):
        d = make_manifest("day_night").to_dict()
        d["version"] = 99
        with self.assertRaises(ManifestViolationError):
            SplitManifest.from_dict(d)

    def test_bad_sizes(self):
        with self.assertRaises(InvalidArgumentError):
            make_manifest("day_night", {"target_val": 0})
        with self.assertRaises(InvalidArgumentError):
            make_manifest("day_night", {"validation": 3})
        with self.assertRaises(UnknownNameError):
            get_scenario("weather")

    def test_regeneration_is_deterministic(self):
        manifest = make_manifest("day_night", {"target_train": 2}, {"azimuth_steps": 32})
        a = regenerate_sample(manifest, "target_train", 1)
        b = regenerate_sample(manifest, "target_train", 1)
        self.assertEqual(a.domain, "target")
        self.assertEqual(a.sample_id, sample_id(1))
        np.testing.assert_array_equal(a.points.coords, b.points.coords)
        np.testing.assert_array_equal(a.image, b.image)

    def test_dataset_scenario_uses_denser_target_lidar(self):
        manifest = make_manifest("dataset", {"source_train": 2, "target_train": 2})
        source = sum(regenerate_sample(manifest, "source_train", i).num_points for i in range(2))
        target = sum(regenerate_sample(manifest, "target_train", i).num_points for i in range(2))
        self.assertGreaterEqual(target, 2 * source)

    def test_raw_labels_are_mapped(self):
        manifest = make_manifest("dataset", {"source_train": 2, "target_train": 2}, {"azimuth_steps": 32})
        for split in ("source_train", "target_train"):
            profile = dataclasses.replace(get_profile(manifest.profile_of(split)), azimuth_steps=32)
            seed = manifest.splits[split].seeds[0]
            raw = generate_scene(profile, INTRINSICS[profile.name], seed, split_domain(split))
            self.assertEqual(raw.label_map, profile.class_map)

            mapped = regenerate_sample(manifest, split, 0)
            self.assertIsNone(mapped.label_map)
            np.testing.assert_array_equal(mapped.labels, map_classes(raw.labels, load_class_map(profile.class_map)))
            self.assertTrue(((mapped.labels >= 0) & (mapped.labels < len(manifest.classes))).all())

    def test_save_maps_raw_labels(self):
        profile = dataclasses.replace(get_profile("a2d2"), azimuth_steps=32)
        raw = generate_scene(profile, INTRINSICS["a2d2"], 4)
        path = os.path.join(setup_scenes.ROOT, "raw_save", sample_id(0))
        try:
            save_sample(raw, path)
            stored = load_sample(path)
        finally:
            shutil.rmtree(os.path.dirname(path), ignore_errors=True)
        np.testing.assert_array_equal(stored.labels, to_target_labels(raw).labels)
        self.assertEqual(raw.label_map, "a2d2_to_shared")

    def test_mismatched_class_map(self):
        manifest = make_manifest("day_night", {"source_train": 1})
        raw = generate_scene(dataclasses.replace(get_profile("a2d2"), azimuth_steps=32), INTRINSICS["a2d2"], 0)
        with self.assertRaises(ManifestViolationError):
            to_target_labels(raw, manifest.classes)


class TestClassFrequencies(unittest.TestCase):
    def test_counts(self):
        freqs = class_frequencies([np.array([0, 0, 0, 1])], 2)
        np.testing.assert_allclose(freqs, [0.75, 0.25])

    def test_ignore_is_excluded(self):
        freqs = class_frequencies([np.array([0, 2, 2]), np.array([1, 1, 2])], 2)
        np.testing.assert_allclose(freqs, [1 / 3, 2 / 3])

    def test_only_ignore(self):
        with self.assertRaises(EmptyDataError):
            class_frequencies([np.array([3, 3])], 3)

    def test_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            class_frequencies([np.array([0, 4])], 3)


class TestBuildSplit(unittest.TestCase):
    def setUp(self):
        self.manifest = setup_scenes.setup("day_night")

    def tearDown(self):
        setup_scenes.teardown("day_night")

    def test_layout(self):
        for name, count in setup_scenes.SIZES.items():
            directory = split_dir("day_night", name, setup_scenes.ROOT)
            self.assertEqual(sorted(os.listdir(directory)), [sample_id(i) for i in range(count)])
        self.assertIn("day_night", scan_dataset_root(setup_scenes.ROOT))

    def test_stored_sample_matches_regeneration(self):
        manifest = load_manifest("day_night", setup_scenes.ROOT)
        stored = load_sample(os.path.join(split_dir("day_night", "source_test", setup_scenes.ROOT), sample_id(1)))
        fresh = regenerate_sample(manifest, "source_test", 1)
        np.testing.assert_allclose(stored.points.coords, fresh.points.coords, atol=1e-5)
        np.testing.assert_array_equal(stored.labels, fresh.labels)
        np.testing.assert_allclose(stored.image, fresh.image, atol=1e-6)
        self.assertEqual(stored.seed, manifest.splits["source_test"].seed_start + 1)

    def test_withheld_labels(self):
        stored = load_sample(
            os.path.join(split_dir("day_night", "target_train", setup_scenes.ROOT), sample_id(0)),
            with_labels=False,
        )
        self.assertTrue((stored.labels == -1).all())

    def test_cached_frequencies(self):
        manifest = load_manifest("day_night", setup_scenes.ROOT)
        cached = source_class_frequencies(manifest, setup_scenes.ROOT)
        self.assertAlmostEqual(float(cached.sum()), 1.0)

        clear_class_frequencies(manifest, setup_scenes.ROOT)
        recomputed = source_class_frequencies(load_manifest("day_night", setup_scenes.ROOT), setup_scenes.ROOT)
        np.testing.assert_allclose(recomputed, cached)

    def test_existing_directory(self):
        with self.assertRaises(ManifestViolationError):
            build_split("day_night", setup_scenes.SIZES, root=setup_scenes.ROOT, disable_progress=True)

    def test_missing_scenario(self):
        with self.assertRaises(ManifestViolationError):
            load_manifest("country", setup_scenes.ROOT)
