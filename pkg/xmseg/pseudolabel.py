"""
Offline pseudo-labels with class-wise confidence thresholds.

For every class the threshold is the ceil(r * n_c)-th largest confidence among the
n_c points predicted as that class; a point keeps its predicted label when its
confidence reaches the threshold of its class.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from xmseg.dataset import SampleDataset
from xmseg.errors import InvalidArgumentError, SplitMisuseError, UnknownNameError
from xmseg.evaluation import predict_split
from xmseg.logging import info, success
from xmseg.split import split_dir
from xmseg.utilities import config, read_array, read_json, write_array, write_json

# kind -> {label set name: prediction used}
PSEUDO_LABEL_KINDS = {
    "2d": {"all": "2d"},
    "3d": {"all": "3d"},
    "softmax_avg": {"all": "softmax_avg"},
    "per_stream": {"2d": "2d", "3d": "3d"},
    "fuse": {"all": "fuse"},
}


def classwise_thresholds(confidences, predictions, num_classes, keep_fraction):
    if not 0 < keep_fraction <= 1:
        raise InvalidArgumentError(
            f"Keep fraction must lie in (0, 1], got {keep_fraction}."
        )
    confidences = np.asarray(confidences, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.int64)

    thresholds = np.full(num_classes, np.inf)
    for c in range(num_classes):
        conf_c = confidences[predictions == c]
        if len(conf_c) == 0:
            continue
        # rounding keeps r * n_c exact for decimal fractions such as 0.3 * 10
        k = max(1, math.ceil(round(keep_fraction * len(conf_c), 9)))
        thresholds[c] = np.sort(conf_c)[::-1][k - 1]
    return thresholds


def apply_thresholds(confidences, predictions, thresholds, ignore_id):
    keep = confidences >= thresholds[predictions]
    return np.where(keep, predictions, ignore_id).astype(np.int64)


@dataclass
class PseudoLabelSet:
    kind: str
    labels: dict  # label set name -> list of per-sample (N_i,) arrays
    provenance: dict = field(default_factory=dict)
    path: str = None

    def __len__(self):
        return len(next(iter(self.labels.values())))

    def labels_of(self, idx):
        return {name: arrays[idx] for name, arrays in self.labels.items()}

    def retained_fraction(self, name):
        return self.provenance["retained_fraction"][name]


def artifact_stem(kind, checkpoint_id):
    return f"pseudo_{kind}_{checkpoint_id}"


def save_pseudo_labels(pl_set, directory):
    os.makedirs(directory, exist_ok=True)
    stem = artifact_stem(pl_set.kind, pl_set.provenance["checkpoint_id"])
    names = list(pl_set.labels)
    flat = np.concatenate([np.concatenate(pl_set.labels[n]) for n in names])
    write_array(os.path.join(directory, stem + ".bin"), flat, config["label_dtype"])

    manifest = dict(pl_set.provenance)
    manifest.update(
        {
            "kind": pl_set.kind,
            "names": names,
            "sizes": [len(a) for a in pl_set.labels[names[0]]],
            "label_dtype": config["label_dtype"],
        }
    )
    write_json(os.path.join(directory, stem + ".json"), manifest)
    pl_set.path = os.path.join(directory, stem + ".bin")
    return pl_set.path


def load_pseudo_labels(path):
    stem = os.path.splitext(path)[0]
    manifest = read_json(stem + ".json")
    sizes = manifest["sizes"]
    names = manifest["names"]
    flat = read_array(stem + ".bin", manifest["label_dtype"], (len(names) * sum(sizes),))
    flat = flat.astype(np.int64)

    offsets = np.cumsum([0] + sizes)
    labels = {}
    for i, name in enumerate(names):
        block = flat[i * sum(sizes) : (i + 1) * sum(sizes)]
        labels[name] = [block[a:b] for a, b in zip(offsets[:-1], offsets[1:])]

    provenance = {k: v for k, v in manifest.items() if k not in ("names", "sizes", "label_dtype")}
    return PseudoLabelSet(manifest["kind"], labels, provenance, path)


def generate_pseudo_labels(
    model,
    scenario,
    kind="per_stream",
    keep_fraction=0.8,
    checkpoint_id="last",
    split="target_train",
    root=None,
    batch_size=8,
    access_log=None,
    save=True,
    directory=None,
):
    """
    Predicts the whole target-train split once, thresholds every label set class-wise
    and persists the result, by default next to the split.
    """
    if kind not in PSEUDO_LABEL_KINDS:
        raise UnknownNameError("pseudo-label kind", kind, PSEUDO_LABEL_KINDS.keys())
    if split != "target_train":
        raise SplitMisuseError(f"Pseudo-labels are generated on `target_train` only, got `{split}`.")
    if not 0 < keep_fraction <= 1:
        raise InvalidArgumentError(f"Keep fraction must lie in (0, 1], got {keep_fraction}.")

    dataset = SampleDataset(
        scenario, split, role="pseudo_label", root=root, with_labels=False, access_log=access_log
    )
    num_classes = dataset.num_classes
    if model.num_classes != num_classes:
        raise InvalidArgumentError(
            f"Checkpoint predicts {model.num_classes} classes, scenario `{scenario}` has {num_classes}."
        )

    sources = PSEUDO_LABEL_KINDS[kind]
    needed = sorted(set(sources.values()))
    info(f"Generating `{kind}` pseudo-labels for {len(dataset)} samples...")

    preds = {p: [] for p in needed}
    confs = {p: [] for p in needed}
    for _, probs in predict_split(model, dataset, batch_size, outputs=needed):
        for p in needed:
            for sample_probs in probs[p]:
                preds[p].append(sample_probs.argmax(axis=1))
                confs[p].append(sample_probs.max(axis=1))

    labels, thresholds, retained = {}, {}, {}
    for name, p in sources.items():
        all_conf = np.concatenate(confs[p])
        all_pred = np.concatenate(preds[p])
        thr = classwise_thresholds(all_conf, all_pred, num_classes, keep_fraction)
        labels[name] = [
            apply_thresholds(c, y, thr, num_classes) for c, y in zip(confs[p], preds[p])
        ]
        kept = np.concatenate(labels[name])
        retained[name] = [
            float((kept == c).sum() / max((all_pred == c).sum(), 1)) for c in range(num_classes)
        ]
        thresholds[name] = [None if not np.isfinite(t) else float(t) for t in thr]

    provenance = {
        "scenario": scenario,
        "split": split,
        "checkpoint_id": checkpoint_id,
        "kind": kind,
        "keep_fraction": keep_fraction,
        "thresholds": thresholds,
        "retained_fraction": retained,
    }
    pl_set = PseudoLabelSet(kind, labels, provenance)
    if save:
        if directory is None:
            directory = os.path.join(split_dir(scenario, split, root), "pseudo")
        save_pseudo_labels(pl_set, directory)
        success(f"Pseudo-labels written to {pl_set.path}.")
    return pl_set
