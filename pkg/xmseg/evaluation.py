import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch.utils.data import DataLoader, SequentialSampler

from xmseg.checkpoint import load_checkpoint
from xmseg.dataset import SampleDataset, record_batch_reads
from xmseg.errors import EmptyEvaluationError, InvalidArgumentError, UnknownNameError
from xmseg.loader import collate_samples
from xmseg.logging import info, print_progress
from xmseg.utilities import config

PREDICTION_KINDS = ("2d", "3d", "softmax_avg", "fuse")


def confusion_matrix(predictions, labels, num_classes, ignore_id=None):
    """Rows are ground truth, columns predictions; ignore labels are dropped."""
    ignore_id = num_classes if ignore_id is None else ignore_id
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(predictions) != len(labels):
        raise InvalidArgumentError(
            f"Got {len(predictions)} predictions for {len(labels)} labels."
        )
    valid = labels != ignore_id
    y, p = labels[valid], predictions[valid]
    if ((y < 0) | (y >= num_classes) | (p < 0) | (p >= num_classes)).any():
        raise InvalidArgumentError(f"Class ids must lie in [0, {num_classes}).")
    return np.bincount(y * num_classes + p, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def iou_from_confusion(cm):
    """
    Per-class IoU and their mean. Classes absent from both ground truth and
    prediction are reported as None and left out of the mean.
    """
    cm = np.asarray(cm, dtype=np.int64)
    if cm.sum() == 0:
        raise EmptyEvaluationError("No non-ignore points were evaluated.")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    iou = [None if u == 0 else float(t / u) for t, u in zip(tp, union)]
    present = [v for v in iou if v is not None]
    return iou, float(np.mean(present))


def miou(predictions, labels, num_classes, ignore_id=None):
    cm = confusion_matrix(predictions, labels, num_classes, ignore_id)
    iou, mean = iou_from_confusion(cm)
    return iou, mean, cm


def softmax_average(probs_2d, probs_3d):
    if probs_2d.shape != probs_3d.shape:
        raise InvalidArgumentError(
            f"Probability shapes differ: {tuple(probs_2d.shape)} vs {tuple(probs_3d.shape)}."
        )
    return (probs_2d + probs_3d) / 2


def predict_probabilities(model, batch, outputs=("2d", "3d", "softmax_avg")):
    for kind in outputs:
        if kind not in PREDICTION_KINDS:
            raise UnknownNameError("prediction kind", kind, PREDICTION_KINDS)

    out_2d, feats_2d = model.forward_2d(batch)
    out_3d, feats_3d = model.forward_3d(batch)
    probs = {"2d": out_2d.main, "3d": out_3d.main}
    probs["softmax_avg"] = softmax_average(out_2d.main, out_3d.main)
    if "fuse" in outputs:
        probs["fuse"] = model.forward_fusion(feats_2d, feats_3d).fuse
    return {k: probs[k] for k in outputs}


def predict_split(model, dataset, batch_size=8, outputs=("2d", "3d", "softmax_avg"), disable_progress=None):
    """
    Yields ``(batch, {kind: [per-sample (N_i, C) arrays]})`` over the dataset in
    order, with the model in eval mode and without gradients.
    """
    disable_progress = config["disable_progress"] if disable_progress is None else disable_progress
    loader = DataLoader(
        dataset,
        batch_size=batch_size,
        sampler=SequentialSampler(dataset),
        collate_fn=collate_samples,
        num_workers=config["num_workers"],
    )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for step, batch in enumerate(loader, start=1):
                record_batch_reads(batch, [dataset])
                probs = predict_probabilities(model, batch, outputs)
                bounds = np.cumsum([0] + batch["sizes"])
                split = {
                    k: [v[a:b].cpu().numpy() for a, b in zip(bounds[:-1], bounds[1:])]
                    for k, v in probs.items()
                }
                if not disable_progress:
                    print_progress(step, len(loader), "batches")
                yield batch, split
    finally:
        model.train(was_training)


@dataclass
class MetricsRecord:
    scenario: str
    recipe: str
    seed: int
    checkpoint_id: str
    split: str = "target_test"
    iteration: int = None
    miou_2d: float = None
    miou_3d: float = None
    miou_avg: float = None
    miou_fuse: float = None
    iou_2d: list = None
    iou_3d: list = None
    iou_avg: list = None
    iou_fuse: list = None
    variant: str = None
    sweep_param: str = None
    sweep_value: float = None
    # kind -> (C, C) nested list, kept in JSON records, not in CSV
    confusion: dict = field(default=None, compare=False, repr=False)

    def score(self):
        """Selection score: the fused output if present, the softmax average otherwise."""
        return self.miou_fuse if self.miou_fuse is not None else self.miou_avg

    def recompute(self):
        """(per-class IoU, mIoU) of every kind from the stored confusion matrices."""
        return {k: iou_from_confusion(np.asarray(cm)) for k, cm in (self.confusion or {}).items()}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate_model(
    model,
    scenario,
    split="target_test",
    root=None,
    batch_size=8,
    recipe=None,
    seed=None,
    checkpoint_id=None,
    iteration=None,
    access_log=None,
):
    dataset = SampleDataset(
        scenario, split, role="evaluate", root=root, with_labels=True, access_log=access_log
    )
    num_classes = dataset.num_classes
    if model.num_classes != num_classes:
        raise InvalidArgumentError(
            f"Model predicts {model.num_classes} classes, scenario `{scenario}` has {num_classes}."
        )

    kinds = ["2d", "3d", "softmax_avg"] + (["fuse"] if model.fusion is not None else [])
    cms = {k: np.zeros((num_classes, num_classes), dtype=np.int64) for k in kinds}

    info(f"Evaluating on `{split}` of `{scenario}`...")
    for batch, probs in predict_split(model, dataset, batch_size, outputs=kinds):
        labels = batch["labels"].numpy()
        for k in kinds:
            pred = np.concatenate([p.argmax(axis=1) for p in probs[k]])
            cms[k] += confusion_matrix(pred, labels, num_classes)

    results = {k: iou_from_confusion(cm) for k, cm in cms.items()}
    fuse = results.get("fuse", (None, None))
    return MetricsRecord(
        scenario=scenario,
        recipe=recipe,
        seed=seed,
        checkpoint_id=checkpoint_id,
        split=split,
        iteration=iteration,
        miou_2d=results["2d"][1],
        miou_3d=results["3d"][1],
        miou_avg=results["softmax_avg"][1],
        miou_fuse=fuse[1],
        iou_2d=results["2d"][0],
        iou_3d=results["3d"][0],
        iou_avg=results["softmax_avg"][0],
        iou_fuse=fuse[0],
        confusion={"avg" if k == "softmax_avg" else k: cm.tolist() for k, cm in cms.items()},
    )


def evaluate_checkpoint(path, split="target_test", root=None, batch_size=8, access_log=None):
    ckpt = load_checkpoint(path)
    model = ckpt.build_model()
    cfg = ckpt.config
    return evaluate_model(
        model,
        cfg["scenario"],
        split,
        root=root,
        batch_size=batch_size,
        recipe=cfg["recipe"],
        seed=cfg["seed"],
        checkpoint_id=ckpt.checkpoint_id,
        iteration=ckpt.iteration,
        access_log=access_log,
    )


def best_of(records):
    """Highest score wins; equal scores go to the later iteration."""
    if not records:
        raise InvalidArgumentError("Cannot select from an empty list of checkpoints.")
    return max(
        enumerate(records),
        key=lambda ir: (ir[1].score(), ir[1].iteration if ir[1].iteration is not None else -math.inf, ir[0]),
    )[1]


def select_best(checkpoints, split="target_val", root=None, batch_size=8, access_log=None):
    """Evaluates every checkpoint on the validation split and returns (path, records)."""
    if not checkpoints:
        raise InvalidArgumentError("Cannot select from an empty list of checkpoints.")
    records = [
        evaluate_checkpoint(p, split, root, batch_size, access_log) for p in checkpoints
    ]
    best = best_of(records)
    return checkpoints[next(i for i, r in enumerate(records) if r is best)], records
