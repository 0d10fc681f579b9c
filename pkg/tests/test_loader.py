import unittest

import numpy as np
import torch

import tests.setup_scenes as setup_scenes
from xmseg.errors import EmptyBatchError, InvalidArgumentError
from xmseg.loader import (
    Dataloader,
    IterationBatchSampler,
    MixedDomainBatchSampler,
    collate_samples,
)


def _item(n, h=4, w=6, labels=True):
    return {
        "image": np.zeros((h, w, 3), dtype=np.float32),
        "points": np.zeros((n, 3), dtype=np.float32),
        "uv": np.zeros((n, 2), dtype=np.float32),
        "labels": np.zeros(n, dtype=np.int64) if labels else None,
        "pseudo": None,
        "domain": "source",
        "split": "source_train",
        "sample_id": "000000",
        "index": 0,
    }


class TestCollate(unittest.TestCase):
    def test_variable_point_counts(self):
        batch = collate_samples([_item(3), _item(5), _item(1)])
        self.assertEqual(tuple(batch["image"].shape), (3, 3, 4, 6))
        self.assertEqual(tuple(batch["points"].shape), (9, 3))
        self.assertEqual(batch["batch_index"].tolist(), [0, 0, 0, 1, 1, 1, 1, 1, 2])
        self.assertEqual(batch["sizes"], [3, 5, 1])
        self.assertEqual(batch["labels"].dtype, torch.int64)

    def test_labels_need_every_item(self):
        self.assertIsNone(collate_samples([_item(2), _item(2, labels=False)])["labels"])

    def test_mismatched_images(self):
        with self.assertRaises(InvalidArgumentError):
            collate_samples([_item(2), _item(2, w=8)])

    def test_empty(self):
        with self.assertRaises(EmptyBatchError):
            collate_samples([])


class TestSamplers(unittest.TestCase):
    def test_batch_is_function_of_seed_and_iteration(self):
        a = IterationBatchSampler(10, 4, seed=3, num_iterations=20)
        b = IterationBatchSampler(10, 4, seed=3, num_iterations=20)
        self.assertEqual(list(a), list(b))
        self.assertNotEqual(
            a.batch_at(0), IterationBatchSampler(10, 4, seed=4, num_iterations=20).batch_at(0)
        )

    def test_resume(self):
        full = list(IterationBatchSampler(7, 3, seed=0, num_iterations=12))
        resumed = list(IterationBatchSampler(7, 3, seed=0, num_iterations=12, start_iteration=5))
        self.assertEqual(resumed, full[5:])

    def test_epochs_cover_every_sample(self):
        sampler = IterationBatchSampler(8, 4, seed=1, num_iterations=4)
        indices = [i for batch in sampler for i, _ in batch]
        self.assertEqual(sorted(indices[:8]), list(range(8)))
        self.assertEqual(sorted(indices[8:]), list(range(8)))

    def test_streams_are_independent(self):
        a = IterationBatchSampler(50, 4, seed=0, num_iterations=1, stream=0)
        b = IterationBatchSampler(50, 4, seed=0, num_iterations=1, stream=1, offset=50)
        self.assertNotEqual([i - 50 for i, _ in b.batch_at(0)], [i for i, _ in a.batch_at(0)])
        self.assertTrue(all(i >= 50 for i, _ in b.batch_at(0)))

    def test_mixed_composition(self):
        sampler = MixedDomainBatchSampler(6, 5, batch_size=8, seed=2, num_iterations=200)
        counts = {"source": 0, "target": 0}
        for it in range(200):
            domains = sampler.domains_at(it)
            self.assertEqual(domains.count("target"), 4)
            for d in domains:
                counts[d] += 1
        self.assertEqual(counts["source"], counts["target"])

    def test_mixed_fraction_bounds(self):
        sampler = MixedDomainBatchSampler(6, 5, batch_size=2, seed=0, num_iterations=1, target_fraction=0.1)
        self.assertEqual(sampler.domains_at(0), ["source", "target"])
        with self.assertRaises(InvalidArgumentError):
            MixedDomainBatchSampler(6, 5, batch_size=4, seed=0, num_iterations=1, target_fraction=1.0)

    def test_bad_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            IterationBatchSampler(0, 2, seed=0, num_iterations=1)
        with self.assertRaises(InvalidArgumentError):
            IterationBatchSampler(4, 0, seed=0, num_iterations=1)


class TestDataloader(unittest.TestCase):
    def setUp(self):
        setup_scenes.setup("day_night")

    def tearDown(self):
        setup_scenes.teardown("day_night")

    def test_evaluation_loader(self):
        loader = Dataloader(
            "day_night", "target_test", role="evaluate", root=setup_scenes.ROOT, batch_size=2
        )
        batches = list(loader)
        self.assertEqual(len(batches), 1)
        batch = batches[0]
        self.assertEqual(batch["image"].shape[:2], (2, 3))
        self.assertEqual(len(batch["labels"]), len(batch["points"]))
        self.assertEqual(batch["domain"], ["target", "target"])

    def test_sampler_driven_training_loader(self):
        loader = Dataloader(
            "day_night",
            "source_train",
            root=setup_scenes.ROOT,
            augment=True,
            crop_width=32,
            batch_sampler=IterationBatchSampler(4, 2, seed=0, num_iterations=3),
        )
        batches = list(loader)
        self.assertEqual(len(batches), 3)
        for batch in batches:
            self.assertEqual(tuple(batch["image"].shape[1:]), (3, 24, 32))
            self.assertEqual(int(batch["batch_index"].max()), 1)
