import bisect
import os
from collections import Counter

import numpy as np
import torch.utils.data

from xmseg.errors import InvalidArgumentError, SplitMisuseError, UnknownNameError
from xmseg.geometry import Augment2DParams, Augment3DParams, augment_2d, augment_3d
from xmseg.logging import success
from xmseg.split import (
    SPLITS,
    get_scenario,
    load_manifest,
    load_sample,
    sample_id,
    split_dir,
    split_domain,
)
from xmseg.utilities import config

ROLES = ("train", "pseudo_label", "evaluate")
HELD_OUT_SPLITS = ("target_val", "target_test")


class AccessLog:
    """Which splits were opened, in which role and whether labels were read."""

    def __init__(self):
        self.entries = {}

    def record(self, split, role, labels, count=0):
        key = (split, role)
        entry = self.entries.setdefault(
            key, {"split": split, "role": role, "labels": False, "reads": 0}
        )
        entry["labels"] = entry["labels"] or bool(labels)
        entry["reads"] += count

    def to_list(self):
        return [dict(e) for e in self.entries.values()]

    def label_reads(self, split):
        return [e for e in self.entries.values() if e["split"] == split and e["labels"]]


def check_access(split, role, with_labels):
    if split not in SPLITS:
        raise UnknownNameError("split", split, SPLITS)
    if role not in ROLES:
        raise UnknownNameError("access role", role, ROLES)

    if split in HELD_OUT_SPLITS and role != "evaluate":
        raise SplitMisuseError(
            f"`{split}` may only be read for evaluation, not in role `{role}`."
        )
    if role == "pseudo_label" and split != "target_train":
        raise SplitMisuseError(
            f"Pseudo-labels are generated on `target_train` only, got `{split}`."
        )
    if role == "pseudo_label" and with_labels:
        raise SplitMisuseError("Pseudo-label generation must not read target labels.")


class SampleDataset(torch.utils.data.Dataset):
    def __init__(
        self,
        scenario,
        split,
        role="train",
        root=None,
        with_labels=None,  # by default labels are withheld on target_train outside evaluation
        augment=False,
        crop_width=None,  # by default the scenario's target crop for target splits
        pseudo_labels=None,
        access_log=None,
        **kwargs,
    ):
        config.update(kwargs)

        if with_labels is None:
            with_labels = role == "evaluate" or split_domain(split) == "source"
        check_access(split, role, with_labels)

        self.scenario = scenario
        self.split = split
        self.role = role
        self.root = root
        self.with_labels = with_labels
        self.augment = augment
        self.access_log = access_log

        self.manifest = load_manifest(scenario, root)
        self.num_classes = len(self.manifest.classes)
        self.ignore_id = self.num_classes
        self.domain = split_domain(split)
        self.directory = split_dir(scenario, split, root)
        self.num_samples = self.manifest.splits[split].count

        if crop_width is None and self.domain == "target":
            crop_width = get_scenario(scenario).target_crop_width
        self.crop_width = crop_width

        if pseudo_labels is not None and len(pseudo_labels) != self.num_samples:
            raise InvalidArgumentError(
                f"Pseudo-label set covers {len(pseudo_labels)} samples, `{split}` holds {self.num_samples}."
            )
        self.pseudo_labels = pseudo_labels

        if access_log is not None:
            access_log.record(split, role, with_labels)

        success(
            f"Loaded `{split}` of `{scenario}` with {self.num_samples} samples "
            + f"(role {role}, labels {'read' if with_labels else 'withheld'})."
        )

    def __len__(self):
        return self.num_samples

    def record_reads(self, count):
        if self.access_log is not None:
            self.access_log.record(self.split, self.role, self.with_labels, count=count)

    def sample_path(self, idx):
        return os.path.join(self.directory, sample_id(idx))

    def __getitem__(self, key):
        """
        ``key`` is an index or an ``(index, augmentation seed)`` pair as yielded by
        the iteration samplers. Without a seed no augmentation is applied.
        """
        idx, aug_seed = key if isinstance(key, tuple) else (key, None)
        if idx < 0 or idx >= len(self):
            raise IndexError

        sample = load_sample(self.sample_path(idx), with_labels=self.with_labels)

        image = sample.image
        coords = sample.points.coords
        pixel_coords = sample.pixel_coords
        labels = sample.labels if self.with_labels else None
        pseudo = None
        if self.pseudo_labels is not None:
            pseudo = {k: v.copy() for k, v in self.pseudo_labels.labels_of(idx).items()}

        if self.augment and aug_seed is not None:
            rng = np.random.default_rng(aug_seed)
            params_2d = Augment2DParams.sample(rng, image.shape[1], crop_width=self.crop_width)
            params_3d = Augment3DParams.sample(rng)

            image, pixel_coords = augment_2d(image, pixel_coords, params_2d)
            keep = pixel_coords.mask
            coords, _ = augment_3d(coords[keep], params_3d)
            pixel_coords = pixel_coords.masked()
            if labels is not None:
                labels = labels[keep]
            if pseudo is not None:
                pseudo = {k: v[keep] for k, v in pseudo.items()}

        return {
            "image": np.ascontiguousarray(image, dtype=np.float32),
            "points": np.asarray(coords, dtype=np.float32),
            "uv": np.asarray(pixel_coords.uv, dtype=np.float32),
            "labels": labels,
            "pseudo": pseudo,
            "domain": self.domain,
            "split": self.split,
            "sample_id": sample.sample_id,
            "index": idx,
        }


class DomainConcatDataset(torch.utils.data.ConcatDataset):
    """``ConcatDataset`` that accepts the ``(index, augmentation seed)`` keys of the samplers."""

    def __getitem__(self, key):
        idx, aug_seed = key if isinstance(key, tuple) else (key, None)
        if idx < 0 or idx >= len(self):
            raise IndexError
        which = bisect.bisect_right(self.cumulative_sizes, idx)
        local = idx - (self.cumulative_sizes[which - 1] if which > 0 else 0)
        item = self.datasets[which][(local, aug_seed) if aug_seed is not None else local]
        item["index"] = idx
        return item


def record_batch_reads(batch, datasets):
    """
    Counts the samples of a collated batch against the datasets they came from.
    Call it where batches are consumed: loader workers hold copies of the access log.
    """
    counts = Counter(batch["splits"])
    for dataset in datasets:
        if counts.get(dataset.split):
            dataset.record_reads(counts[dataset.split])
    return batch
