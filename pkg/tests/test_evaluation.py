import os
import unittest

import numpy as np
import torch

import tests.setup_scenes as setup_scenes
from xmseg.checkpoint import load_checkpoint, save_checkpoint
from xmseg.dataset import AccessLog
from xmseg.errors import EmptyEvaluationError, InvalidArgumentError
from xmseg.evaluation import (
    MetricsRecord,
    best_of,
    confusion_matrix,
    evaluate_checkpoint,
    miou,
    select_best,
    softmax_average,
)
from xmseg.nets import XModalModel

SMALL = dict(features_2d=8, features_3d=8, base_width=4, k=4, fusion_hidden=8)


def brute_force_miou(pred, labels, num_classes):
    ious = []
    for c in range(num_classes):
        tp = sum(1 for p, y in zip(pred, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(pred, labels) if p == c and y != c and y != num_classes)
        fn = sum(1 for p, y in zip(pred, labels) if p != c and y == c)
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    return sum(ious) / len(ious)


def _record(score, iteration, checkpoint_id):
    return MetricsRecord("day_night", "xmuda", 0, checkpoint_id, "target_val", iteration, miou_avg=score)


class TestMetrics(unittest.TestCase):
    def test_two_class_example(self):
        iou, mean, cm = miou([0, 0, 1, 1], [0, 1, 1, 1], 2)
        self.assertEqual(iou, [0.5, 2 / 3])
        self.assertAlmostEqual(mean, 7 / 12)
        self.assertEqual(cm.tolist(), [[1, 0], [1, 2]])

    def test_ignored_points(self):
        _, mean, cm = miou([0, 1, 1], [0, 2, 2], 2)
        self.assertEqual(int(cm.sum()), 1)
        self.assertEqual(mean, 1.0)

    def test_absent_class_left_out(self):
        iou, mean, _ = miou([0, 0], [0, 0], 3)
        self.assertEqual(iou, [1.0, None, None])
        self.assertEqual(mean, 1.0)

    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, c = int(rng.integers(5, 60)), int(rng.integers(2, 6))
            labels = rng.integers(0, c + 1, n)  # c is the ignore id
            pred = rng.integers(0, c, n)
            if (labels == c).all():
                continue
            _, mean, _ = miou(pred, labels, c)
            self.assertAlmostEqual(mean, brute_force_miou(pred.tolist(), labels.tolist(), c))

    def test_nothing_to_evaluate(self):
        with self.assertRaises(EmptyEvaluationError):
            miou([0, 1], [2, 2], 2)

    def test_bad_inputs(self):
        with self.assertRaises(InvalidArgumentError):
            confusion_matrix([0, 1], [0], 2)
        with self.assertRaises(InvalidArgumentError):
            confusion_matrix([0, 3], [0, 1], 2)

    def test_softmax_average(self):
        avg = softmax_average(torch.tensor([[0.8, 0.2]]), torch.tensor([[0.4, 0.6]]))
        torch.testing.assert_close(avg, torch.tensor([[0.6, 0.4]]))
        with self.assertRaises(InvalidArgumentError):
            softmax_average(torch.zeros(2, 2), torch.zeros(3, 2))


class TestSelection(unittest.TestCase):
    def test_highest_score(self):
        records = [_record(0.3, 100, "a"), _record(0.5, 200, "b"), _record(0.4, 300, "c")]
        self.assertEqual(best_of(records).checkpoint_id, "b")

    def test_tie_goes_to_later_checkpoint(self):
        records = [_record(0.5, 300, "late"), _record(0.5, 100, "early")]
        self.assertEqual(best_of(records).checkpoint_id, "late")

    def test_fusion_score_preferred(self):
        record = _record(0.3, 1, "a")
        record.miou_fuse = 0.6
        self.assertEqual(record.score(), 0.6)

    def test_empty(self):
        with self.assertRaises(InvalidArgumentError):
            best_of([])
        with self.assertRaises(InvalidArgumentError):
            select_best([])

    def test_record_round_trip(self):
        record = _record(0.5, 10, "x")
        record.confusion = {"avg": [[1, 0], [0, 1]]}
        self.assertEqual(record.recompute()["avg"][1], 1.0)
        self.assertEqual(MetricsRecord.from_dict(record.to_dict()), record)


class TestEvaluateCheckpoint(unittest.TestCase):
    def setUp(self):
        setup_scenes.setup("day_night")
        torch.manual_seed(0)
        self.paths = []
        for i in range(2):
            model = XModalModel(5, fusion="vanilla", **SMALL)
            path = os.path.join(setup_scenes.ROOT, "day_night", "ckpt", f"ckpt_{i:06d}.h5")
            save_checkpoint(
                path,
                model,
                iteration=10 * (i + 1),
                config={"scenario": "day_night", "recipe": "fusion_baseline", "seed": 0},
                model_config=dict(SMALL, fusion="vanilla"),
            )
            self.paths.append(path)

    def tearDown(self):
        setup_scenes.teardown("day_night")

    def test_round_trip_parameters(self):
        ckpt = load_checkpoint(self.paths[0])
        self.assertEqual(ckpt.iteration, 10)
        self.assertEqual(ckpt.checkpoint_id, "ckpt_000000")
        model = ckpt.build_model()
        again = load_checkpoint(self.paths[0]).build_model()
        for (name, a), (_, b) in zip(model.state_dict().items(), again.state_dict().items()):
            torch.testing.assert_close(a, b, msg=name)

    def test_evaluation_is_deterministic(self):
        log = AccessLog()
        a = evaluate_checkpoint(self.paths[0], "target_test", setup_scenes.ROOT, batch_size=2, access_log=log)
        b = evaluate_checkpoint(self.paths[0], "target_test", setup_scenes.ROOT, batch_size=2)
        self.assertEqual(a, b)
        self.assertEqual(a.confusion, b.confusion)
        self.assertIsNotNone(a.miou_fuse)
        self.assertEqual(a.recipe, "fusion_baseline")
        self.assertEqual(a.iteration, 10)
        self.assertEqual(log.label_reads("target_test")[0]["role"], "evaluate")
        self.assertAlmostEqual(a.recompute()["2d"][1], a.miou_2d)

    def test_select_best(self):
        best, records = select_best(self.paths, "target_val", setup_scenes.ROOT, batch_size=2)
        self.assertEqual(len(records), 2)
        self.assertIs(best_of(records), records[self.paths.index(best)])
        self.assertTrue(all(r.split == "target_val" for r in records))
