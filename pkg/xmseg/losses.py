"""
Training objectives.

Every loss takes row-stochastic probabilities. Per-stream objectives are kept as
ordered, already weighted terms named ``<stream>/<kind>`` (e.g. ``2d/xm``); the
stream total is their plain sum in insertion order.
"""

import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np
import torch

from xmseg.errors import ConfigError, InvalidArgumentError

LOG_SMOOTHING_ALPHA = 1.02
CORAL_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 1.0
    lambda_t: float = 0.1
    lambda_pl: float = 1.0
    lambda_minent: float = 0.01
    lambda_coral: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ConfigError(f"Loss weight `{f.name}` must be a finite number >= 0, got {value}.")


class LossTerm(NamedTuple):
    value: torch.Tensor
    empty: bool = False


def _log(p):
    # only guards against float underflow of the softmax
    return torch.log(p.clamp_min(torch.finfo(p.dtype).tiny))


def log_smoothed_weights(frequencies, alpha=LOG_SMOOTHING_ALPHA):
    """w_c = 1 / ln(alpha + f_c); absent classes get the largest weight 1 / ln(alpha)."""
    f = np.asarray(frequencies, dtype=np.float64)
    if (f < 0).any() or not np.isfinite(f).all():
        raise InvalidArgumentError("Class frequencies must be finite and non-negative.")
    return torch.as_tensor(1.0 / np.log(alpha + f))


def seg_loss(probs, labels, weights=None, ignore_id=None):
    """
    Class-weighted cross-entropy averaged over the non-ignore points. A batch
    without such points yields a zero term flagged ``empty``.
    """
    num_classes = probs.shape[1]
    ignore_id = num_classes if ignore_id is None else ignore_id
    if len(labels) != len(probs):
        raise InvalidArgumentError(
            f"Got {len(labels)} labels for {len(probs)} predictions."
        )
    labels = labels.long()
    valid = labels != ignore_id
    if ((labels[valid] < 0) | (labels[valid] >= num_classes)).any():
        raise InvalidArgumentError(f"Labels must lie in [0, {num_classes}) or be the ignore id.")

    if not valid.any():
        return LossTerm(probs.sum() * 0.0, True)

    y = labels[valid]
    log_p = _log(probs[valid]).gather(1, y.unsqueeze(1)).squeeze(1)
    if weights is not None:
        log_p = weights.to(probs.dtype)[y] * log_p
    return LossTerm(-log_p.sum() / valid.sum(), False)


def kl_mimicry(target, mimic):
    """
    Mean over points of KL(target || mimic). The target is detached so gradients
    only reach the network producing ``mimic``.
    """
    if target.shape != mimic.shape:
        raise InvalidArgumentError(
            f"Mimicry shapes differ: {tuple(target.shape)} vs {tuple(mimic.shape)}."
        )
    if len(target) == 0:
        return mimic.sum() * 0.0
    p = target.detach()
    return (p * (_log(p) - _log(mimic))).sum(dim=1).mean()


def entropy_min(probs):
    """Mean row entropy normalized by ln C, so uniform rows give 1."""
    num_classes = probs.shape[1]
    if num_classes < 2:
        raise InvalidArgumentError("Entropy normalization needs at least two classes.")
    if len(probs) == 0:
        return probs.sum() * 0.0
    entropy = -(probs * _log(probs)).sum(dim=1)
    return entropy.mean() / math.log(num_classes)


def covariance(features):
    if features.shape[0] < 2:
        raise InvalidArgumentError("A covariance needs at least two feature rows.")
    centered = features - features.mean(dim=0, keepdim=True)
    return centered.T @ centered / (features.shape[0] - 1)


def _divided_differences(values, logs, eps):
    """
    K_ij = (log l_i - log l_j) / (l_i - l_j), and the derivative of the floored
    log at the midpoint where the two eigenvalues (numerically) coincide.
    """
    diff = values[:, None] - values[None, :]
    scale = values.abs().max().clamp_min(eps)
    close = diff.abs() <= math.sqrt(torch.finfo(values.dtype).eps) * scale
    mid = (values[:, None] + values[None, :]) / 2
    slope = torch.where(mid > eps, 1.0 / mid.clamp_min(eps), torch.zeros_like(mid))
    quotient = (logs[:, None] - logs[None, :]) / torch.where(close, torch.ones_like(diff), diff)
    return torch.where(close, slope, quotient)


class _SymmetricLog(torch.autograd.Function):
    # eigh's own backward divides by eigenvalue gaps and is NaN for repeated eigenvalues

    @staticmethod
    def forward(ctx, cov, eps):
        values, vectors = torch.linalg.eigh(cov)
        logs = torch.log(values.clamp_min(eps))
        ctx.save_for_backward(values, vectors, logs)
        ctx.eps = eps
        return vectors @ torch.diag_embed(logs) @ vectors.T

    @staticmethod
    def backward(ctx, grad):
        values, vectors, logs = ctx.saved_tensors
        grad = (grad + grad.T) / 2
        inner = _divided_differences(values, logs, ctx.eps) * (vectors.T @ grad @ vectors)
        return vectors @ inner @ vectors.T, None


def log_matrix(cov, eps=CORAL_EPS):
    """Symmetric matrix logarithm with eigenvalues floored at ``eps``."""
    return _SymmetricLog.apply(cov, eps)


def log_coral_from_covariances(cov_source, cov_target, eps=CORAL_EPS):
    diff = log_matrix(cov_source, eps) - log_matrix(cov_target, eps)
    return (diff**2).sum()


def log_coral(features_source, features_target, eps=CORAL_EPS):
    if features_source.shape[1] != features_target.shape[1]:
        raise InvalidArgumentError("Source and target features must have the same width.")
    if not (torch.isfinite(features_source).all() and torch.isfinite(features_target).all()):
        raise InvalidArgumentError("logCORAL received non-finite features.")
    return log_coral_from_covariances(
        covariance(features_source), covariance(features_target), eps
    )


@dataclass
class Objective:
    terms: dict = field(default_factory=dict)
    empty: dict = field(default_factory=dict)

    def add(self, name, value, empty=False):
        self.terms[name] = value
        self.empty[name] = empty

    def total(self, stream):
        values = [v for k, v in self.terms.items() if k.split("/", 1)[0] == stream]
        if not values:
            return None
        total = values[0]
        for v in values[1:]:
            total = total + v
        return total

    @property
    def loss_2d(self):
        return self.total("2d")

    @property
    def loss_3d(self):
        return self.total("3d")

    @property
    def loss_fuse(self):
        return self.total("fuse")

    def streams(self):
        return list(dict.fromkeys(k.split("/", 1)[0] for k in self.terms))

    def scalars(self, prefix=""):
        return {prefix + k: float(v.detach()) for k, v in self.terms.items()}


def _pseudo_for(pseudo, stream):
    if pseudo is None:
        return None
    if isinstance(pseudo, dict):
        return pseudo.get(stream, pseudo.get("all"))
    return pseudo


def assemble_objective(
    outputs_2d,
    outputs_3d,
    domain,
    weights,
    class_weights=None,
    labels=None,
    pseudo_labels=None,  # tensor shared by both streams or {"2d": ..., "3d": ...}
    ignore_id=None,
    cross_modal=True,
):
    """
    Per-stream objective of one batch.

    source: segmentation on labels plus ``lambda_s`` weighted mimicry.
    target: ``lambda_t`` weighted mimicry plus, with pseudo-labels,
    ``lambda_pl`` weighted segmentation on them.
    The 2D stream mimics P_3D with its mimicry head, the 3D stream mimics P_2D.
    """
    objective = Objective()

    if domain == "source":
        if labels is None:
            raise InvalidArgumentError("Source batches need labels.")
        for stream, out in (("2d", outputs_2d), ("3d", outputs_3d)):
            term = seg_loss(out.main, labels, class_weights, ignore_id)
            objective.add(f"{stream}/seg", term.value, term.empty)
        xm_weight = weights.lambda_s
    elif domain == "target":
        xm_weight = weights.lambda_t
    else:
        raise InvalidArgumentError(f"Unknown domain `{domain}`.")

    if cross_modal:
        objective.add("2d/xm", xm_weight * kl_mimicry(outputs_3d.main, outputs_2d.mimic))
        objective.add("3d/xm", xm_weight * kl_mimicry(outputs_2d.main, outputs_3d.mimic))

    if domain == "target" and pseudo_labels is not None:
        for stream, out in (("2d", outputs_2d), ("3d", outputs_3d)):
            pl = _pseudo_for(pseudo_labels, stream)
            if pl is None:
                continue
            term = seg_loss(out.main, pl, class_weights, ignore_id)
            objective.add(f"{stream}/pl", weights.lambda_pl * term.value, term.empty)

    return objective
