import math
import unittest

import torch

from tests.gradcheck import directional_check
from xmseg.errors import ConfigError, InvalidArgumentError
from xmseg.losses import (
    LossWeights,
    Objective,
    assemble_objective,
    covariance,
    entropy_min,
    kl_mimicry,
    log_coral,
    log_coral_from_covariances,
    log_matrix,
    log_smoothed_weights,
    seg_loss,
)
from xmseg.nets import DualHeadOutput


def _probs(logits):
    return torch.softmax(logits, dim=1)


class TestClassWeights(unittest.TestCase):
    def test_log_smoothing(self):
        w = log_smoothed_weights([0.9, 0.1])
        self.assertAlmostEqual(float(w[0]), 1.533, delta=5e-3)
        self.assertAlmostEqual(float(w[1]), 8.824, delta=5e-3)

    def test_absent_class_gets_largest_weight(self):
        w = log_smoothed_weights([0.7, 0.3, 0.0])
        self.assertAlmostEqual(float(w[2]), 1 / math.log(1.02))
        self.assertEqual(int(torch.argmax(w)), 2)

    def test_negative_frequency(self):
        with self.assertRaises(InvalidArgumentError):
            log_smoothed_weights([1.2, -0.2])


class TestSegLoss(unittest.TestCase):
    def test_uniform_two_class(self):
        term = seg_loss(torch.tensor([[0.5, 0.5]]), torch.tensor([0]))
        self.assertAlmostEqual(float(term.value), math.log(2))
        self.assertFalse(term.empty)

    def test_ignored_points_do_not_count(self):
        probs = torch.tensor([[0.5, 0.5], [0.01, 0.99]])
        term = seg_loss(probs, torch.tensor([0, 2]))
        self.assertAlmostEqual(float(term.value), math.log(2))

    def test_all_ignored(self):
        probs = torch.tensor([[0.2, 0.8]], requires_grad=True)
        term = seg_loss(probs, torch.tensor([2]))
        self.assertTrue(term.empty)
        self.assertEqual(float(term.value), 0.0)
        term.value.backward()
        self.assertEqual(float(probs.grad.abs().sum()), 0.0)

    def test_class_weights_scale(self):
        probs = torch.tensor([[0.5, 0.5]])
        term = seg_loss(probs, torch.tensor([1]), torch.tensor([1.0, 3.0]))
        self.assertAlmostEqual(float(term.value), 3 * math.log(2), places=6)

    def test_bad_labels(self):
        with self.assertRaises(InvalidArgumentError):
            seg_loss(torch.tensor([[0.5, 0.5]]), torch.tensor([5]))
        with self.assertRaises(InvalidArgumentError):
            seg_loss(torch.tensor([[0.5, 0.5]]), torch.tensor([0, 1]))


class TestMimicry(unittest.TestCase):
    def test_identical_distributions(self):
        p = _probs(torch.randn(7, 4, generator=torch.Generator().manual_seed(0)))
        self.assertAlmostEqual(float(kl_mimicry(p, p.clone())), 0.0, places=6)

    def test_near_one_hot_against_uniform(self):
        target = torch.tensor([[1 - 1e-9, 1e-9]], dtype=torch.float64)
        mimic = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        self.assertAlmostEqual(float(kl_mimicry(target, mimic)), math.log(2), places=6)

    def test_target_is_detached(self):
        target = torch.tensor([[0.3, 0.7]], requires_grad=True)
        mimic = torch.tensor([[0.6, 0.4]], requires_grad=True)
        kl_mimicry(target, mimic).backward()
        self.assertIsNone(target.grad)
        self.assertIsNotNone(mimic.grad)

    def test_non_negative(self):
        gen = torch.Generator().manual_seed(1)
        for _ in range(5):
            p = _probs(torch.randn(9, 3, generator=gen))
            q = _probs(torch.randn(9, 3, generator=gen))
            self.assertGreaterEqual(float(kl_mimicry(p, q)), 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            kl_mimicry(torch.full((2, 2), 0.5), torch.full((2, 3), 1 / 3))


class TestEntropy(unittest.TestCase):
    def test_binary(self):
        self.assertAlmostEqual(float(entropy_min(torch.tensor([[0.75, 0.25]]))), 0.8113, places=4)

    def test_uniform_is_one(self):
        self.assertAlmostEqual(float(entropy_min(torch.full((3, 5), 0.2))), 1.0, places=6)

    def test_one_hot_is_zero(self):
        self.assertAlmostEqual(float(entropy_min(torch.tensor([[1.0, 0.0, 0.0]]))), 0.0, places=6)


class TestLogCoral(unittest.TestCase):
    def test_known_covariances(self):
        a = torch.eye(2, dtype=torch.float64)
        b = torch.diag(torch.tensor([math.e**2, 1.0], dtype=torch.float64))
        self.assertAlmostEqual(float(log_coral_from_covariances(a, b)), 4.0, places=6)

    def test_symmetric_and_zero_on_self(self):
        gen = torch.Generator().manual_seed(2)
        fs = torch.randn(30, 4, generator=gen, dtype=torch.float64)
        ft = 2 * torch.randn(25, 4, generator=gen, dtype=torch.float64)
        self.assertAlmostEqual(float(log_coral(fs, ft)), float(log_coral(ft, fs)), places=8)
        self.assertAlmostEqual(float(log_coral(fs, fs.clone())), 0.0, places=8)

    def test_gradient_matches_eigendecomposition(self):
        gen = torch.Generator().manual_seed(6)
        a = torch.randn(5, 5, generator=gen, dtype=torch.float64)
        cov = (a @ a.T + 0.5 * torch.eye(5, dtype=torch.float64)).requires_grad_()
        weights = torch.randn(5, 5, generator=gen, dtype=torch.float64)
        weights = weights + weights.T

        (log_matrix(cov) * weights).sum().backward()
        reference = cov.grad.clone()
        cov.grad = None

        plain = cov.detach().requires_grad_()
        values, vectors = torch.linalg.eigh(plain)
        ((vectors @ torch.diag_embed(torch.log(values)) @ vectors.T) * weights).sum().backward()
        torch.testing.assert_close(reference, plain.grad)

    def test_rank_deficient_features(self):
        gen = torch.Generator().manual_seed(7)
        fs = torch.randn(16, 8, generator=gen, dtype=torch.float64)
        ft = torch.randn(16, 8, generator=gen, dtype=torch.float64)
        fs[:, 3:] = 0.0
        ft[:, 3:] = 0.0
        fs.requires_grad_()
        ft.requires_grad_()

        loss = log_coral(fs, ft)
        loss.backward()
        self.assertTrue(math.isfinite(float(loss)))
        self.assertTrue(torch.isfinite(fs.grad).all())
        self.assertTrue(torch.isfinite(ft.grad).all())

        # the zero block only adds a constant, so the rest matches the 3-wide problem
        narrow_s = fs.detach()[:, :3].clone().requires_grad_()
        narrow_t = ft.detach()[:, :3].clone().requires_grad_()
        log_coral(narrow_s, narrow_t).backward()
        torch.testing.assert_close(fs.grad[:, :3], narrow_s.grad)
        torch.testing.assert_close(fs.grad[:, 3:], torch.zeros(16, 5, dtype=torch.float64))

    def test_repeated_eigenvalues(self):
        cov = torch.eye(4, dtype=torch.float64).requires_grad_()
        target = torch.diag(torch.tensor([2.0, 2.0, 0.5, 1.0], dtype=torch.float64))
        log_coral_from_covariances(cov, target).backward()
        # d/dC ||log C - log T||^2 at C = I is 2 (log I - log T)
        torch.testing.assert_close(cov.grad, -2 * torch.diag(torch.log(torch.diag(target))))

    def test_covariance_needs_two_rows(self):
        with self.assertRaises(InvalidArgumentError):
            covariance(torch.zeros(1, 3))

    def test_non_finite_features(self):
        fs = torch.randn(4, 2)
        fs[0, 0] = float("nan")
        with self.assertRaises(InvalidArgumentError):
            log_coral(fs, torch.randn(4, 2))


class TestAssembleObjective(unittest.TestCase):
    def setUp(self):
        gen = torch.Generator().manual_seed(3)
        self.logits = [torch.randn(6, 3, generator=gen, dtype=torch.float64).requires_grad_() for _ in range(4)]
        self.labels = torch.tensor([0, 1, 2, 3, 1, 0])  # 3 is the ignore id

    def _outputs(self):
        m2, x2, m3, x3 = (_probs(t) for t in self.logits)
        return DualHeadOutput(m2, x2), DualHeadOutput(m3, x3)

    def test_source_terms(self):
        out2d, out3d = self._outputs()
        obj = assemble_objective(out2d, out3d, "source", LossWeights(lambda_s=0.5), labels=self.labels)
        self.assertEqual(list(obj.terms), ["2d/seg", "3d/seg", "2d/xm", "3d/xm"])
        expected = seg_loss(out2d.main, self.labels).value + 0.5 * kl_mimicry(out3d.main, out2d.mimic)
        self.assertAlmostEqual(float(obj.loss_2d), float(expected), places=10)
        self.assertIsNone(obj.loss_fuse)

    def test_target_terms(self):
        out2d, out3d = self._outputs()
        pl = {"2d": self.labels, "3d": torch.full((6,), 3)}
        obj = assemble_objective(out2d, out3d, "target", LossWeights(), pseudo_labels=pl)
        self.assertEqual(list(obj.terms), ["2d/xm", "3d/xm", "2d/pl", "3d/pl"])
        self.assertFalse(obj.empty["2d/pl"])
        self.assertTrue(obj.empty["3d/pl"])
        self.assertAlmostEqual(
            float(obj.terms["3d/xm"]), 0.1 * float(kl_mimicry(out2d.main, out3d.mimic)), places=10
        )

    def test_without_cross_modal(self):
        out2d, out3d = self._outputs()
        obj = assemble_objective(out2d, out3d, "target", LossWeights(), cross_modal=False)
        self.assertEqual(obj.streams(), [])
        self.assertIsNone(obj.loss_2d)

    def test_mimicry_gradients_stay_in_stream(self):
        out2d, out3d = self._outputs()
        obj = assemble_objective(out2d, out3d, "target", LossWeights())
        obj.loss_2d.backward()
        main2d, mimic2d, main3d, mimic3d = self.logits
        self.assertIsNone(main3d.grad)
        self.assertIsNone(main2d.grad)
        self.assertGreater(float(mimic2d.grad.abs().sum()), 0.0)

    def test_gradients(self):
        def total():
            out2d, out3d = self._outputs()
            obj = assemble_objective(out2d, out3d, "source", LossWeights(), labels=self.labels)
            return obj.loss_2d + obj.loss_3d

        self.assertLess(directional_check(total, self.logits), 1e-5)

    def test_entropy_and_coral_gradients(self):
        gen = torch.Generator().manual_seed(4)
        fs = torch.randn(12, 3, generator=gen, dtype=torch.float64).requires_grad_()
        ft = torch.randn(10, 3, generator=gen, dtype=torch.float64).requires_grad_()
        self.assertLess(directional_check(lambda: log_coral(fs, ft), [fs, ft]), 1e-5)
        self.assertLess(directional_check(lambda: entropy_min(_probs(self.logits[0])), self.logits[:1]), 1e-5)

    def test_missing_source_labels(self):
        out2d, out3d = self._outputs()
        with self.assertRaises(InvalidArgumentError):
            assemble_objective(out2d, out3d, "source", LossWeights())

    def test_bad_weight(self):
        with self.assertRaises(ConfigError):
            LossWeights(lambda_t=-1.0)

    def test_objective_reduction_order(self):
        obj = Objective()
        obj.add("2d/seg", torch.tensor(1.0))
        obj.add("3d/seg", torch.tensor(2.0))
        obj.add("2d/xm", torch.tensor(0.5))
        self.assertEqual(obj.streams(), ["2d", "3d"])
        self.assertEqual(float(obj.loss_2d), 1.5)
        self.assertEqual(obj.scalars("source/"), {"source/2d/seg": 1.0, "source/3d/seg": 2.0, "source/2d/xm": 0.5})
