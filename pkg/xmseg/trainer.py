import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import torch
from torch.utils.data import DataLoader

from xmseg.checkpoint import load_checkpoint, save_checkpoint
from xmseg.dataset import DomainConcatDataset, SampleDataset, record_batch_reads
from xmseg.errors import ConfigError, InvalidArgumentError, NonFiniteLossError
from xmseg.loader import IterationBatchSampler, MixedDomainBatchSampler, collate_samples
from xmseg.logging import fail, info, print_progress, success
from xmseg.losses import (
    LossWeights,
    Objective,
    assemble_objective,
    entropy_min,
    kl_mimicry,
    log_coral,
    log_smoothed_weights,
    seg_loss,
)
from xmseg.nets.model import XModalModel
from xmseg.split import load_manifest, source_class_frequencies
from xmseg.utilities import config as package_config
from xmseg.utilities import read_json, write_json


@dataclass
class ModelConfig:
    head_mode: str = "dual"
    features_2d: int = 64
    features_3d: int = 64
    base_width: int = 16
    dropout: float = 0.3
    voxel_size: float = 0.25
    k: int = 16
    fusion_hidden: int = 64
    sampling: str = "nearest"


@dataclass
class DataConfig:
    root: str = None
    batch_size: int = 8
    augment: bool = True
    num_workers: int = 0


@dataclass
class PseudoLabelConfig:
    kind: str = "per_stream"
    keep_fraction: float = 0.8


@dataclass
class ScheduleConfig:
    total_iterations: int = 4000
    lr: float = 1e-3
    lr_milestones: tuple = (3200, 3600)
    betas: tuple = (0.9, 0.999)
    log_interval: int = 50
    checkpoint_interval: int = 500


_SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "loss_weights": LossWeights,
    "pseudo_label": PseudoLabelConfig,
    "schedule": ScheduleConfig,
}


def _section_from_dict(cls, name, d):
    if not isinstance(d, dict):
        raise ConfigError(f"Config section `{name}` must be an object.")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"Unknown keys in `{name}`: {', '.join(sorted(unknown))}.")
    values = dict(d)
    for key in ("lr_milestones", "betas"):
        if key in values:
            values[key] = tuple(values[key])
    return cls(**values)


@dataclass
class TrainConfig:
    scenario: str = "day_night"
    recipe: str = "xmuda"
    seed: int = 0
    oracle_cross_modal: bool = False
    oracle_target_fraction: float = 0.5
    # run directory of a finished xmuda_pl run, used by the distillation recipe
    distillation_source: str = None
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    pseudo_label: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        s = self.schedule
        if s.total_iterations < 1:
            raise ConfigError("total_iterations must be at least 1.")
        milestones = list(s.lr_milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigError("lr_milestones must be strictly increasing.")
        if milestones and milestones[-1] >= s.total_iterations:
            raise ConfigError("lr_milestones must lie below total_iterations.")
        if not s.lr > 0:
            raise ConfigError("lr must be positive.")
        if self.data.batch_size < 1:
            raise ConfigError("batch_size must be at least 1.")
        if not 0 < self.pseudo_label.keep_fraction <= 1:
            raise ConfigError("keep_fraction must lie in (0, 1].")
        if s.log_interval < 1 or s.checkpoint_interval < 1:
            raise ConfigError("log_interval and checkpoint_interval must be at least 1.")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}.")
        for name, section in _SECTIONS.items():
            if name in d:
                d[name] = _section_from_dict(section, name, d[name])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e))

    @classmethod
    def from_file(cls, path):
        try:
            return cls.from_dict(read_json(path))
        except json.decoder.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")
        except FileNotFoundError:
            raise ConfigError(f"Config file {path} does not exist.")

    def to_dict(self):
        d = asdict(self)
        d["schedule"]["lr_milestones"] = list(self.schedule.lr_milestones)
        d["schedule"]["betas"] = list(self.schedule.betas)
        return d

    def save(self, path):
        write_json(path, self.to_dict())

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)

    def with_value(self, path, value):
        """Copy with the dotted ``path`` (e.g. ``loss_weights.lambda_t``) set to ``value``."""
        d = self.to_dict()
        node = d
        *parents, leaf = path.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"Unknown config path `{path}`.")
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"Unknown config path `{path}`.")
        node[leaf] = value
        return TrainConfig.from_dict(d)


def lr_at(iteration, config):
    """Base lr divided by 10 for every milestone already reached."""
    drops = sum(1 for m in config.schedule.lr_milestones if iteration >= m)
    return config.schedule.lr / 10**drops


@dataclass
class PhaseObjective:
    """What a training phase optimizes."""

    name: str
    cross_modal: bool = False
    target_loss: str = None  # "minent" or "logcoral"
    fusion: str = None  # "vanilla" or "xmuda_fusion"
    supervised_target: bool = False
    mixed_batches: bool = False
    use_pseudo_labels: bool = False

    def to_dict(self):
        return asdict(self)


class RunLog:
    """run.json: phases, pseudo-label artifacts and split accesses of one run."""

    def __init__(self, run_dir, config):
        self.path = os.path.join(run_dir, package_config["run_manifest_name"])
        self.data = {
            "recipe": config.recipe,
            "scenario": config.scenario,
            "seed": config.seed,
            "config": config.to_dict(),
            "phases": [],
            "pseudo_labels": [],
            "split_access": [],
            "prerequisites": [],
        }

    def add_phase(self, phase):
        self.data["phases"].append(phase)
        self.save()

    def add_pseudo_labels(self, entry):
        self.data["pseudo_labels"].append(entry)
        self.save()

    def set_access(self, access_log):
        self.data["split_access"] = access_log.to_list()
        self.save()

    def save(self):
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        write_json(self.path, self.data)


def load_run_log(run_dir):
    return read_json(os.path.join(run_dir, package_config["run_manifest_name"]))


class Trainer:
    """
    One training phase: a model, one Adam optimizer per stream and the
    iteration-indexed source/target batch streams.
    """

    def __init__(
        self,
        config,
        objective,
        run_dir,
        phase="train",
        pseudo_labels=None,
        access_log=None,
        class_weights=None,
    ):
        self.config = config
        self.objective = objective
        self.run_dir = run_dir
        self.phase = phase
        self.phase_dir = os.path.join(run_dir, phase)
        self.pseudo_labels = pseudo_labels
        self.access_log = access_log
        self.iteration = 0
        self.checkpoints = []

        torch.manual_seed(config.seed)
        manifest = load_manifest(config.scenario, config.data.root)
        self.num_classes = len(manifest.classes)

        self.model_config = dict(asdict(config.model), fusion=objective.fusion)
        self.model = XModalModel(self.num_classes, **self.model_config)

        if class_weights is None:
            class_weights = log_smoothed_weights(
                source_class_frequencies(manifest, config.data.root)
            )
        self.class_weights = class_weights.to(torch.get_default_dtype())

        betas = tuple(config.schedule.betas)
        self.optimizers = {}
        for stream in ("2d", "3d", "fuse"):
            params = self.model.parameters_of(stream)
            if params:
                self.optimizers[stream] = torch.optim.Adam(
                    params, lr=config.schedule.lr, betas=betas
                )

        self._source_iter = None
        self._target_iter = None
        self.mixed_sampler = None

    # data

    def _dataset(self, split, with_labels=None, pseudo_labels=None):
        return SampleDataset(
            self.config.scenario,
            split,
            role="train",
            root=self.config.data.root,
            with_labels=with_labels,
            augment=self.config.data.augment,
            pseudo_labels=pseudo_labels,
            access_log=self.access_log,
        )

    def _loader(self, dataset, batch_sampler):
        loader = DataLoader(
            dataset,
            batch_sampler=batch_sampler,
            collate_fn=collate_samples,
            num_workers=self.config.data.num_workers,
            generator=torch.Generator().manual_seed(self.config.seed),
        )
        datasets = getattr(dataset, "datasets", [dataset])
        return (record_batch_reads(batch, datasets) for batch in loader)

    def _build_loaders(self):
        cfg = self.config
        total, batch_size = cfg.schedule.total_iterations, cfg.data.batch_size

        if self.objective.mixed_batches:
            source = self._dataset("source_train")
            target = self._dataset("target_train", with_labels=True)
            sampler = MixedDomainBatchSampler(
                len(source),
                len(target),
                batch_size,
                cfg.seed,
                total,
                target_fraction=cfg.oracle_target_fraction,
                start_iteration=self.iteration,
            )
            self.mixed_sampler = sampler
            self._source_iter = self._loader(DomainConcatDataset([source, target]), sampler)
            self._target_iter = None
            return

        if self.objective.supervised_target:
            target = self._dataset("target_train", with_labels=True)
            self._source_iter = self._loader(
                target,
                IterationBatchSampler(len(target), batch_size, cfg.seed, total, self.iteration, stream=1),
            )
            self._target_iter = None
            return

        source = self._dataset("source_train")
        target = self._dataset(
            "target_train",
            with_labels=False,
            pseudo_labels=self.pseudo_labels if self.objective.use_pseudo_labels else None,
        )
        self._source_iter = self._loader(
            source,
            IterationBatchSampler(len(source), batch_size, cfg.seed, total, self.iteration, stream=0),
        )
        self._target_iter = self._loader(
            target,
            IterationBatchSampler(len(target), batch_size, cfg.seed, total, self.iteration, stream=1),
        )

    # objective

    def _cast(self, batch):
        dtype = next(self.model.parameters()).dtype
        batch = dict(batch)
        for key in ("image", "points", "uv"):
            batch[key] = batch[key].to(dtype)
        return batch

    def _forward(self, batch):
        batch = self._cast(batch)
        out_2d, feats_2d = self.model.forward_2d(batch)
        out_3d, feats_3d = self.model.forward_3d(batch)
        fused = None
        if self.objective.fusion is not None:
            fused = self.model.forward_fusion(feats_2d, feats_3d)
        return out_2d, out_3d, feats_2d, feats_3d, fused

    def _fusion_objective(self, fused, labels, domain, pseudo):
        weights = self.config.loss_weights
        objective = Objective()
        xm_weight = weights.lambda_s if domain == "source" else weights.lambda_t

        if domain == "source":
            term = seg_loss(fused.fuse, labels, self.class_weights)
            objective.add("fuse/seg", term.value, term.empty)
        if self.objective.fusion == "xmuda_fusion" and self.objective.cross_modal:
            objective.add("2d/xm", xm_weight * kl_mimicry(fused.fuse, fused.toward_fuse_2d))
            objective.add("3d/xm", xm_weight * kl_mimicry(fused.fuse, fused.toward_fuse_3d))
        pl = None
        if domain == "target" and pseudo is not None:
            pl = pseudo.get("fuse", pseudo.get("all")) if isinstance(pseudo, dict) else pseudo
        if pl is not None:
            term = seg_loss(fused.fuse, pl, self.class_weights)
            objective.add("fuse/pl", weights.lambda_pl * term.value, term.empty)
        return objective

    def source_objective(self, batch):
        out_2d, out_3d, feats_2d, feats_3d, fused = self._forward(batch)
        if batch["labels"] is None:
            raise InvalidArgumentError("Source batches need labels.")
        if fused is not None:
            objective = self._fusion_objective(fused, batch["labels"], "source", None)
        else:
            objective = assemble_objective(
                out_2d,
                out_3d,
                "source",
                self.config.loss_weights,
                self.class_weights,
                labels=batch["labels"],
                cross_modal=self.objective.cross_modal,
            )
        return objective, (feats_2d, feats_3d)

    def target_objective(self, batch, source_features=None):
        out_2d, out_3d, feats_2d, feats_3d, fused = self._forward(batch)
        weights = self.config.loss_weights
        pseudo = batch["pseudo"] if self.objective.use_pseudo_labels else None

        if fused is not None:
            objective = self._fusion_objective(fused, None, "target", pseudo)
            if self.objective.target_loss == "minent":
                objective.add("fuse/minent", weights.lambda_minent * entropy_min(fused.fuse))
            elif self.objective.target_loss == "logcoral":
                objective.add(
                    "fuse/coral",
                    weights.lambda_coral
                    * log_coral(
                        torch.cat(source_features, dim=1), torch.cat([feats_2d, feats_3d], dim=1)
                    ),
                )
            return objective

        objective = assemble_objective(
            out_2d,
            out_3d,
            "target",
            weights,
            self.class_weights,
            pseudo_labels=pseudo,
            cross_modal=self.objective.cross_modal,
        )
        if self.objective.target_loss == "minent":
            objective.add("2d/minent", weights.lambda_minent * entropy_min(out_2d.main))
            objective.add("3d/minent", weights.lambda_minent * entropy_min(out_3d.main))
        elif self.objective.target_loss == "logcoral":
            objective.add("2d/coral", weights.lambda_coral * log_coral(source_features[0], feats_2d))
            objective.add("3d/coral", weights.lambda_coral * log_coral(source_features[1], feats_3d))
        return objective

    @staticmethod
    def _backward(objective, retain_graph=False):
        totals = [objective.total(s) for s in objective.streams()]
        if not totals:
            return
        total = totals[0]
        for t in totals[1:]:
            total = total + t
        if total.requires_grad:
            total.backward(retain_graph=retain_graph)

    def _dump_nonfinite(self, components, message, **extra):
        dump = os.path.join(self.phase_dir, f"nonfinite_{self.iteration:06d}.json")
        os.makedirs(self.phase_dir, exist_ok=True)
        write_json(dump, {"iteration": self.iteration, "components": components, **extra})
        fail(f"{message} Dump: {dump}")
        raise NonFiniteLossError(message, components)

    def _check_finite(self, components):
        bad = sorted(k for k, v in components.items() if not math.isfinite(v))
        if bad:
            self._dump_nonfinite(
                components, f"Non-finite loss terms at iteration {self.iteration}: {', '.join(bad)}."
            )

    def _check_gradients(self, components):
        # finite losses can still backpropagate NaN, e.g. through a degenerate decomposition
        bad = [
            name
            for name, p in self.model.named_parameters()
            if p.grad is not None and not torch.isfinite(p.grad).all()
        ]
        if bad:
            self._dump_nonfinite(
                components,
                f"Non-finite gradients at iteration {self.iteration} in {len(bad)} parameters: "
                + f"{', '.join(bad[:5])}.",
                gradients=bad,
            )

    def train_step(self, source_batch, target_batch=None):
        """
        Gradients of the source and target objectives are accumulated by two
        backward passes, then every stream's optimizer steps once.
        """
        self.model.train()
        for opt in self.optimizers.values():
            opt.zero_grad(set_to_none=True)

        source_obj, source_features = self.source_objective(source_batch)
        target_obj = None
        if target_batch is not None:
            coral = self.objective.target_loss == "logcoral"
            if not coral:
                self._backward(source_obj)
            target_obj = self.target_objective(
                target_batch, source_features if coral else None
            )
            if coral:
                self._backward(source_obj, retain_graph=True)
            components = {**source_obj.scalars("source/"), **target_obj.scalars("target/")}
            self._check_finite(components)
            self._backward(target_obj)
        else:
            components = source_obj.scalars("source/")
            self._check_finite(components)
            self._backward(source_obj)

        self._check_gradients(components)
        lr = lr_at(self.iteration, self.config)
        for opt in self.optimizers.values():
            for group in opt.param_groups:
                group["lr"] = lr
            opt.step()

        self.iteration += 1
        totals = {}
        for obj, prefix in ((source_obj, "source"), (target_obj, "target")):
            if obj is None:
                continue
            for stream in obj.streams():
                totals[f"{prefix}/{stream}/total"] = float(obj.total(stream).detach())
        return {"lr": lr, **components, **totals}

    # loop

    def _next_batches(self):
        if self._source_iter is None:
            self._build_loaders()
        source = next(self._source_iter)
        target = next(self._target_iter) if self._target_iter is not None else None
        return source, target

    def _metrics_path(self):
        return os.path.join(self.run_dir, package_config["metrics_name"])

    def _log(self, record):
        os.makedirs(self.run_dir, exist_ok=True)
        with open(self._metrics_path(), "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint_path(self, iteration):
        return os.path.join(
            self.phase_dir, f"ckpt_{iteration:06d}{package_config['checkpoint_ext']}"
        )

    def save(self, metrics=None):
        path = self.checkpoint_path(self.iteration)
        save_checkpoint(
            path,
            self.model,
            self.iteration,
            self.config.to_dict(),
            self.model_config,
            optimizers=self.optimizers,
            metrics=metrics,
            checkpoint_id=f"{self.phase}_{self.iteration:06d}",
        )
        self.checkpoints.append(path)
        return path

    def resume(self, path):
        """Restores parameters, optimizer moments, RNG state and iteration."""
        ckpt = load_checkpoint(path)
        if ckpt.model_config != self.model_config or ckpt.num_classes != self.num_classes:
            raise InvalidArgumentError(f"Checkpoint {path} was written by a different model.")
        ckpt.restore_model(self.model)
        ckpt.restore_optimizers(self.optimizers)
        ckpt.restore_rng()
        self.iteration = ckpt.iteration
        self._source_iter = self._target_iter = None
        info(f"Resumed `{self.phase}` at iteration {self.iteration}.")
        return ckpt

    def run(self, until=None, disable_progress=None):
        cfg = self.config
        until = cfg.schedule.total_iterations if until is None else min(until, cfg.schedule.total_iterations)
        disable_progress = package_config["disable_progress"] if disable_progress is None else disable_progress

        info(f"Training phase `{self.phase}` ({self.objective.name}) for {until - self.iteration} iterations...")
        metrics = {}
        while self.iteration < until:
            source, target = self._next_batches()
            metrics = self.train_step(source, target)

            if self.iteration % cfg.schedule.log_interval == 0 or self.iteration == until:
                self._log({"phase": self.phase, "iteration": self.iteration, **metrics})
            if (
                self.iteration % cfg.schedule.checkpoint_interval == 0
                or self.iteration == cfg.schedule.total_iterations
            ):
                self.save(metrics)
            if not disable_progress:
                print_progress(self.iteration, until, f"it {self.iteration}")

        success(f"Phase `{self.phase}` finished at iteration {self.iteration}.")
        return self.checkpoints
