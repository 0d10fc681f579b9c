"""
Scenarios, split manifests and on-disk samples.

Layout: ``<root>/<scenario>/manifest.json`` and
``<root>/<scenario>/<split>/<sample_id>/{image,points,labels,uv}.bin + meta.json``.
"""

import dataclasses
import os
import shutil
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from xmseg.classmap import load_class_map, map_classes
from xmseg.errors import (
    EmptyDataError,
    InvalidArgumentError,
    ManifestViolationError,
    UnknownNameError,
)
from xmseg.geometry import CameraIntrinsics, PixelCoords, PointCloud
from xmseg.logging import info, print_progress, success
from xmseg.scene import INTRINSICS, Sample, generate_scene, get_profile, lidar_to_camera
from xmseg.utilities import config, read_array, read_json, write_array, write_json

MANIFEST_VERSION = 1

SPLITS = ("source_train", "source_test", "target_train", "target_val", "target_test")
DEFAULT_SIZES = {
    "source_train": 400,
    "source_test": 100,
    "target_train": 400,
    "target_val": 50,
    "target_test": 100,
}


@dataclass(frozen=True)
class Scenario:
    name: str
    source_profile: str
    target_profile: str
    source_camera: str
    target_camera: str
    class_map: str
    base_seed: int
    target_crop_width: int = None
    # frame counts of the real-data splits, kept as documentation only
    reference_counts: dict = field(default_factory=dict)


SCENARIOS = {
    "day_night": Scenario(
        "day_night", "day", "night", "nuscenes", "nuscenes", "nuscenes_to_5cat", 1_000_000,
        reference_counts=dict(zip(SPLITS, (24745, 5417, 2779, 606, 602))),
    ),
    "country": Scenario(
        "country", "usa", "singapore", "nuscenes", "nuscenes", "nuscenes_to_5cat", 2_000_000,
        reference_counts=dict(zip(SPLITS, (15695, 3090, 9665, 2770, 2929))),
    ),
    "dataset": Scenario(
        "dataset", "a2d2", "semantic_kitti", "a2d2", "semantic_kitti", "a2d2_to_shared", 3_000_000,
        target_crop_width=96,
        reference_counts=dict(zip(SPLITS, (27695, 942, 18029, 1101, 4071))),
    ),
}


def get_scenario(name):
    if name not in SCENARIOS:
        raise UnknownNameError("scenario", name, SCENARIOS.keys())
    return SCENARIOS[name]


def split_domain(split):
    return split.split("_", 1)[0]


@dataclass(frozen=True)
class SplitInfo:
    count: int
    seed_start: int

    @property
    def seeds(self):
        return range(self.seed_start, self.seed_start + self.count)


@dataclass
class SplitManifest:
    scenario: str
    splits: dict
    classes: tuple = ()
    source_profile: str = None
    target_profile: str = None
    profile_overrides: dict = field(default_factory=dict)
    image_scale: float = 1.0
    reference_counts: dict = field(default_factory=dict)
    class_frequencies: list = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        unknown = set(self.splits) - set(SPLITS)
        if unknown:
            raise ManifestViolationError(f"Unknown splits: {', '.join(sorted(unknown))}.")
        for name, s in self.splits.items():
            if s.count <= 0:
                raise ManifestViolationError(f"Split `{name}` must hold at least one sample.")

        ordered = sorted(self.splits.items(), key=lambda kv: kv[1].seed_start)
        for (name_a, a), (name_b, b) in zip(ordered, ordered[1:]):
            if a.seed_start + a.count > b.seed_start:
                raise ManifestViolationError(
                    f"Seed ranges of `{name_a}` and `{name_b}` overlap."
                )

    def splits_of_seed(self, seed):
        return [name for name, s in self.splits.items() if seed in s.seeds]

    def check_seed(self, seed):
        owners = self.splits_of_seed(seed)
        if len(owners) > 1:
            raise ManifestViolationError(
                f"Seed {seed} is declared by several splits: {', '.join(owners)}."
            )

    def profile_of(self, split):
        return self.source_profile if split_domain(split) == "source" else self.target_profile

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "version": MANIFEST_VERSION,
            "source_profile": self.source_profile,
            "target_profile": self.target_profile,
            "classes": list(self.classes),
            "splits": {
                name: {"count": s.count, "seed_start": s.seed_start}
                for name, s in self.splits.items()
            },
            "profile_overrides": self.profile_overrides,
            "image_scale": self.image_scale,
            "reference_counts": self.reference_counts,
            "class_frequencies": self.class_frequencies,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MANIFEST_VERSION:
            raise ManifestViolationError(
                f"Unsupported manifest version {d.get('version')}, expected {MANIFEST_VERSION}."
            )
        return cls(
            scenario=d["scenario"],
            splits={n: SplitInfo(s["count"], s["seed_start"]) for n, s in d["splits"].items()},
            classes=tuple(d["classes"]),
            source_profile=d["source_profile"],
            target_profile=d["target_profile"],
            profile_overrides=d.get("profile_overrides", {}),
            image_scale=d.get("image_scale", 1.0),
            reference_counts=d.get("reference_counts", {}),
            class_frequencies=d.get("class_frequencies"),
        )


def make_manifest(scenario, sizes=None, profile_overrides=None, image_scale=1.0):
    scen = get_scenario(scenario)
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    for name, count in sizes.items():
        if name not in SPLITS:
            raise InvalidArgumentError(f"Unknown split `{name}`.")
        if int(count) <= 0:
            raise InvalidArgumentError(f"Size of split `{name}` must be positive, got {count}.")

    splits, start = {}, scen.base_seed
    for name in SPLITS:
        splits[name] = SplitInfo(int(sizes[name]), start)
        start += int(sizes[name])

    return SplitManifest(
        scenario=scenario,
        splits=splits,
        classes=tuple(load_class_map(scen.class_map).classes),
        source_profile=scen.source_profile,
        target_profile=scen.target_profile,
        profile_overrides=dict(profile_overrides or {}),
        image_scale=float(image_scale),
        reference_counts=dict(scen.reference_counts),
    )


def scaled_intrinsics(intr, scale):
    if scale == 1.0:
        return intr
    width = max(1, int(round(intr.width * scale)))
    height = max(1, int(round(intr.height * scale)))
    return CameraIntrinsics(
        fx=intr.fx * scale,
        fy=intr.fy * scale,
        cx=min(intr.cx * scale, width - 1),
        cy=min(intr.cy * scale, height - 1),
        width=width,
        height=height,
    )


def _resolve_generation(manifest, split):
    scen = get_scenario(manifest.scenario)
    profile = get_profile(manifest.profile_of(split))
    if manifest.profile_overrides:
        profile = dataclasses.replace(profile, **manifest.profile_overrides)
    if tuple(profile.classes) != tuple(manifest.classes):
        raise ManifestViolationError(
            f"Profile `{profile.name}` does not use the class list of scenario `{manifest.scenario}`."
        )
    camera = scen.source_camera if split_domain(split) == "source" else scen.target_camera
    intr = scaled_intrinsics(INTRINSICS[camera], manifest.image_scale)
    return profile, intr


def to_target_labels(sample, classes=None):
    """
    Maps raw dataset labels through the sample's class map. With ``classes`` the map
    must target exactly that class list.
    """
    if sample.label_map is None:
        return sample
    cmap = load_class_map(sample.label_map)
    if classes is not None and tuple(cmap.classes) != tuple(classes):
        raise ManifestViolationError(
            f"Class map `{cmap.name}` does not target the classes of the manifest."
        )
    return dataclasses.replace(sample, labels=map_classes(sample.labels, cmap), label_map=None)


def regenerate_sample(manifest, split, index):
    """Re-creates sample ``index`` of ``split`` in memory from the manifest seeds."""
    profile, intr = _resolve_generation(manifest, split)
    seed = manifest.splits[split].seeds[index]
    sample = generate_scene(profile, intr, seed, domain=split_domain(split), manifest=manifest)
    sample = to_target_labels(sample, manifest.classes)
    sample.sample_id = sample_id(index)
    return sample


def sample_id(index):
    return f"{index:06d}"


# sample storage


def save_sample(sample, path, intr=None, extrinsic=None):
    """Stored labels are always target class ids; raw labels are mapped first."""
    sample = to_target_labels(sample)
    os.makedirs(path, exist_ok=True)
    float_dtype, label_dtype = config["float_dtype"], config["label_dtype"]

    write_array(os.path.join(path, "image.bin"), sample.image, float_dtype)
    write_array(os.path.join(path, "points.bin"), sample.points.coords, float_dtype)
    write_array(os.path.join(path, "labels.bin"), sample.labels, label_dtype)
    write_array(os.path.join(path, "uv.bin"), sample.pixel_coords.uv, float_dtype)

    meta = {
        "sample_id": sample.sample_id,
        "seed": sample.seed,
        "profile": sample.profile,
        "domain": sample.domain,
        "num_points": sample.num_points,
        "image_shape": list(sample.image.shape),
        "float_dtype": float_dtype,
        "label_dtype": label_dtype,
    }
    if intr is not None:
        meta["intrinsics"] = intr.to_dict()
    if extrinsic is not None:
        meta["extrinsic"] = extrinsic.to_dict()
    write_json(os.path.join(path, config["sample_meta_name"]), meta)


def load_sample_meta(path):
    return read_json(os.path.join(path, config["sample_meta_name"]))


def load_sample(path, with_labels=True):
    meta = load_sample_meta(path)
    n = meta["num_points"]
    float_dtype, label_dtype = meta["float_dtype"], meta["label_dtype"]

    image = read_array(os.path.join(path, "image.bin"), float_dtype, meta["image_shape"])
    coords = read_array(os.path.join(path, "points.bin"), float_dtype, (n, 3))
    uv = read_array(os.path.join(path, "uv.bin"), float_dtype, (n, 2))
    if with_labels:
        labels = read_array(os.path.join(path, "labels.bin"), label_dtype, (n,)).astype(np.int64)
    else:
        labels = np.full(n, -1, dtype=np.int64)

    return Sample(
        image=image.astype(np.float32),
        points=PointCloud(coords.astype(np.float64)),
        labels=labels,
        pixel_coords=PixelCoords(uv.astype(np.float64), np.ones(n, dtype=bool)),
        domain=meta["domain"],
        seed=meta["seed"],
        profile=meta["profile"],
        sample_id=meta["sample_id"],
    )


def scenario_dir(scenario, root=None):
    return os.path.join(root or config["dataset_root"], scenario)


def split_dir(scenario, split, root=None):
    return os.path.join(scenario_dir(scenario, root), split)


def load_manifest(scenario, root=None):
    path = os.path.join(scenario_dir(scenario, root), config["manifest_name"])
    if not os.path.isfile(path):
        raise ManifestViolationError(
            f"Scenario `{scenario}` is not materialized (no manifest at {path})."
        )
    return SplitManifest.from_dict(read_json(path))


def save_manifest(manifest, root=None):
    path = os.path.join(scenario_dir(manifest.scenario, root), config["manifest_name"])
    os.makedirs(os.path.dirname(path), exist_ok=True)
    write_json(path, manifest.to_dict())


# statistics


def class_frequencies(samples, num_classes):
    """
    Frequencies of the non-ignore labels; ``samples`` yields Samples or label arrays.
    """
    counts = np.zeros(num_classes + 1, dtype=np.int64)
    for s in samples:
        labels = np.asarray(s.labels if isinstance(s, Sample) else s, dtype=np.int64)
        if labels.size == 0:
            continue
        if labels.min() < 0 or labels.max() > num_classes:
            raise InvalidArgumentError(
                f"Labels must lie in [0, {num_classes}] (ignore id {num_classes})."
            )
        counts += np.bincount(labels, minlength=num_classes + 1)

    return _frequencies_from_counts(counts, num_classes)


def _frequencies_from_counts(counts, num_classes):
    counts = counts[:num_classes]
    total = counts.sum()
    if total == 0:
        raise EmptyDataError("No non-ignore labels to compute class frequencies from.")
    return counts / total


def source_class_frequencies(manifest, root=None):
    """Cached in the manifest, computed from the stored source-train labels on a miss."""
    if manifest.class_frequencies is not None:
        return np.asarray(manifest.class_frequencies, dtype=np.float64)

    directory = split_dir(manifest.scenario, "source_train", root)
    labels = (
        load_sample(os.path.join(directory, sample_id(i))).labels
        for i in range(manifest.splits["source_train"].count)
    )
    freqs = class_frequencies(labels, len(manifest.classes))
    manifest.class_frequencies = freqs.tolist()
    save_manifest(manifest, root)
    return freqs


def clear_class_frequencies(manifest, root=None):
    manifest.class_frequencies = None
    save_manifest(manifest, root)


# materialization


def _materialize(job):
    manifest, split, index, directory = job
    _, intr = _resolve_generation(manifest, split)
    sample = regenerate_sample(manifest, split, index)
    save_sample(sample, os.path.join(directory, sample.sample_id), intr, lidar_to_camera())
    return split, np.bincount(sample.labels, minlength=len(manifest.classes) + 1)


def build_split(
    scenario,
    sizes=None,
    root=None,
    num_workers=None,
    profile_overrides=None,
    image_scale=1.0,
    overwrite=False,
    disable_progress=None,
):
    """
    Materializes every split of ``scenario`` below ``root`` and persists its manifest.
    Source-train class frequencies are cached in the manifest.
    """
    manifest = make_manifest(scenario, sizes, profile_overrides, image_scale)
    num_workers = config["num_workers"] if num_workers is None else num_workers
    disable_progress = config["disable_progress"] if disable_progress is None else disable_progress

    directory = scenario_dir(scenario, root)
    if os.path.isdir(directory):
        if not overwrite:
            raise ManifestViolationError(
                f"{directory} already exists, pass overwrite=True to regenerate."
            )
        shutil.rmtree(directory)
    os.makedirs(directory)

    jobs = [
        (manifest, split, i, split_dir(scenario, split, root))
        for split in SPLITS
        for i in range(manifest.splits[split].count)
    ]

    info(f"Generating {len(jobs)} samples for scenario `{scenario}`...")
    counts = np.zeros(len(manifest.classes) + 1, dtype=np.int64)

    if num_workers > 1:
        with Pool(num_workers) as pool:
            results = pool.imap(_materialize, jobs)
            counts = _collect(results, counts, len(jobs), disable_progress)
    else:
        counts = _collect(map(_materialize, jobs), counts, len(jobs), disable_progress)

    manifest.class_frequencies = _frequencies_from_counts(counts, len(manifest.classes)).tolist()
    save_manifest(manifest, root)
    success(f"Scenario `{scenario}` written to {directory}.")
    return manifest


def _collect(results, counts, total, disable_progress):
    for done, (split, hist) in enumerate(results, start=1):
        if split == "source_train":
            counts += hist
        if not disable_progress:
            print_progress(done, total, "samples")
    return counts
