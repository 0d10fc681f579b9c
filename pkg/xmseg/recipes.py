"""
Training recipes: one or two training phases, optionally separated by an offline
pseudo-labeling pass on target_train. Every phase starts from scratch.
"""

import os
from dataclasses import dataclass

from xmseg.checkpoint import load_checkpoint
from xmseg.dataset import AccessLog
from xmseg.errors import DependencyError, UnknownNameError
from xmseg.logging import info, success
from xmseg.pseudolabel import generate_pseudo_labels
from xmseg.trainer import PhaseObjective, RunLog, Trainer, load_run_log
from xmseg.utilities import config as package_config


@dataclass
class Recipe:
    name: str
    phases: list
    # kind of the pseudo-labels produced between the phases; None uses the config's kind
    pseudo_label_kind: str = None
    requires: str = None  # recipe whose finished run provides the pseudo-labels
    mixed_oracle_scenarios: tuple = ()


def _phase(name, **kwargs):
    return PhaseObjective(name, **kwargs)


RECIPES = {
    r.name: r
    for r in [
        Recipe("baseline", [_phase("baseline")]),
        Recipe("minent", [_phase("minent", target_loss="minent")]),
        Recipe("logcoral", [_phase("logcoral", target_loss="logcoral")]),
        Recipe("pl", [_phase("baseline"), _phase("pl", use_pseudo_labels=True)]),
        Recipe("xmuda", [_phase("xmuda", cross_modal=True)]),
        Recipe(
            "xmuda_pl",
            [_phase("xmuda", cross_modal=True), _phase("xmuda_pl", cross_modal=True, use_pseudo_labels=True)],
        ),
        Recipe(
            "oracle",
            [_phase("oracle", supervised_target=True)],
            mixed_oracle_scenarios=("day_night",),
        ),
        Recipe("fusion_baseline", [_phase("fusion_baseline", fusion="vanilla")]),
        Recipe("fusion_minent", [_phase("fusion_minent", fusion="vanilla", target_loss="minent")]),
        Recipe("fusion_logcoral", [_phase("fusion_logcoral", fusion="vanilla", target_loss="logcoral")]),
        Recipe(
            "fusion_pl",
            [_phase("fusion_baseline", fusion="vanilla"), _phase("fusion_pl", fusion="vanilla", use_pseudo_labels=True)],
            pseudo_label_kind="fuse",
        ),
        Recipe("xmuda_fusion", [_phase("xmuda_fusion", fusion="xmuda_fusion", cross_modal=True)]),
        Recipe(
            "xmuda_pl_fusion",
            [
                _phase("xmuda_fusion", fusion="xmuda_fusion", cross_modal=True),
                _phase("xmuda_pl_fusion", fusion="xmuda_fusion", cross_modal=True, use_pseudo_labels=True),
            ],
            pseudo_label_kind="fuse",
        ),
        Recipe(
            "distillation",
            [_phase("distillation", fusion="vanilla", use_pseudo_labels=True)],
            pseudo_label_kind="softmax_avg",
            requires="xmuda_pl",
        ),
        Recipe(
            "fusion_oracle",
            [_phase("fusion_oracle", fusion="vanilla", supervised_target=True)],
            mixed_oracle_scenarios=("day_night",),
        ),
    ]
}


def get_recipe(name):
    if name not in RECIPES:
        raise UnknownNameError("recipe", name, RECIPES.keys())
    return RECIPES[name]


def default_run_dir(config):
    return os.path.join(
        package_config["runs_root"], config.scenario, config.recipe, f"seed_{config.seed}"
    )


def _objective_for(phase, recipe, config):
    objective = PhaseObjective(**phase.to_dict())
    if objective.supervised_target:
        objective.cross_modal = config.oracle_cross_modal
        if objective.cross_modal and objective.fusion == "vanilla":
            objective.fusion = "xmuda_fusion"
        objective.mixed_batches = config.scenario in recipe.mixed_oracle_scenarios
    return objective


def _prerequisite_checkpoint(recipe, config):
    source = config.distillation_source
    if source is None:
        raise DependencyError(
            f"Recipe `{recipe.name}` needs a finished `{recipe.requires}` run (set `distillation_source`)."
        )
    try:
        log = load_run_log(source)
    except FileNotFoundError:
        raise DependencyError(f"No run manifest in {source}.")
    if log["recipe"] != recipe.requires or log["scenario"] != config.scenario:
        raise DependencyError(
            f"{source} holds a `{log['recipe']}` run on `{log['scenario']}`, "
            + f"`{recipe.requires}` on `{config.scenario}` is required."
        )
    if len(log["phases"]) < 2 or not log["phases"][-1]["checkpoints"]:
        raise DependencyError(f"The `{recipe.requires}` run in {source} is not finished.")
    return log["phases"][-1]["checkpoints"][-1]


def _pseudo_labels(checkpoint_path, kind, config, run_dir, access_log):
    ckpt = load_checkpoint(checkpoint_path)
    return generate_pseudo_labels(
        ckpt.build_model(),
        config.scenario,
        kind=kind,
        keep_fraction=config.pseudo_label.keep_fraction,
        checkpoint_id=ckpt.checkpoint_id,
        root=config.data.root,
        batch_size=config.data.batch_size,
        access_log=access_log,
        directory=os.path.join(run_dir, "pseudo"),
    )


def run_recipe(recipe, config, run_dir=None, disable_progress=None):
    """
    Runs every phase of ``recipe`` and returns ``(checkpoints of the last phase,
    metrics stream path)``.
    """
    recipe = get_recipe(recipe) if isinstance(recipe, str) else recipe
    config = config.replace(recipe=recipe.name)
    run_dir = run_dir or default_run_dir(config)
    os.makedirs(run_dir, exist_ok=True)
    metrics_path = os.path.join(run_dir, package_config["metrics_name"])
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    config.save(os.path.join(run_dir, "config.json"))

    access_log = AccessLog()
    run_log = RunLog(run_dir, config)
    pl_kind = recipe.pseudo_label_kind or config.pseudo_label.kind
    info(f"Running recipe `{recipe.name}` on `{config.scenario}` (seed {config.seed}).")

    pseudo_labels = None
    if recipe.requires is not None:
        prerequisite = _prerequisite_checkpoint(recipe, config)
        run_log.data["prerequisites"].append({"recipe": recipe.requires, "checkpoint": prerequisite})
        pseudo_labels = _pseudo_labels(prerequisite, pl_kind, config, run_dir, access_log)
        run_log.add_pseudo_labels(_artifact_entry(pseudo_labels))

    checkpoints = []
    for i, phase in enumerate(recipe.phases):
        if i > 0:
            pseudo_labels = _pseudo_labels(checkpoints[-1], pl_kind, config, run_dir, access_log)
            run_log.add_pseudo_labels(_artifact_entry(pseudo_labels))

        objective = _objective_for(phase, recipe, config)
        trainer = Trainer(
            config,
            objective,
            run_dir,
            phase=f"phase{i}_{phase.name}",
            pseudo_labels=pseudo_labels if objective.use_pseudo_labels else None,
            access_log=access_log,
        )
        checkpoints = trainer.run(disable_progress=disable_progress)
        run_log.add_phase(
            {
                "name": trainer.phase,
                "objective": objective.to_dict(),
                "from_scratch": True,
                "pseudo_labels": pseudo_labels.path if objective.use_pseudo_labels else None,
                "checkpoints": checkpoints,
            }
        )

    run_log.set_access(access_log)
    success(f"Recipe `{recipe.name}` finished, run directory {run_dir}.")
    return checkpoints, metrics_path


def _artifact_entry(pl_set):
    return {
        "path": pl_set.path,
        "kind": pl_set.kind,
        "checkpoint_id": pl_set.provenance["checkpoint_id"],
        "keep_fraction": pl_set.provenance["keep_fraction"],
    }
