import os
import statistics
import traceback
from dataclasses import dataclass, field
from multiprocessing import Pool

from xmseg.errors import InvalidArgumentError
from xmseg.evaluation import MetricsRecord, evaluate_checkpoint, select_best
from xmseg.logging import fail, info, success
from xmseg.recipes import run_recipe
from xmseg.report import write_csv, write_records
from xmseg.utilities import config as package_config
from xmseg.utilities import write_json

# named configuration variants compared over the same grid
HEAD_VARIANTS = {
    "dual": {"model.head_mode": "dual"},
    "single": {"model.head_mode": "single"},
}
SOURCE_LOSS_VARIANTS = {
    "source_target": {},
    "target_only": {"loss_weights.lambda_s": 0.0},
}
ORACLE_VARIANTS = {
    "plain": {"oracle_cross_modal": False},
    "xm": {"oracle_cross_modal": True},
}
VARIANT_SETS = {"heads": HEAD_VARIANTS, "source_loss": SOURCE_LOSS_VARIANTS, "oracle": ORACLE_VARIANTS}


@dataclass
class SweepPoint:
    variant: str
    value: object
    seed: int
    config: object
    run_dir: str


@dataclass
class SweepFailure:
    variant: str
    value: object
    seed: int
    error: str

    def to_dict(self):
        return {"variant": self.variant, "value": self.value, "seed": self.seed, "error": self.error}


@dataclass
class SweepResult:
    param: str
    grid: list
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    curve_path: str = None

    def curves(self):
        """{variant: [(value, mean score, [per-seed scores])]} in grid order."""
        out = {}
        for variant in dict.fromkeys(r.variant for r in self.records):
            rows = []
            for value in self.grid:
                scores = [
                    r.score() for r in self.records if r.variant == variant and r.sweep_value == value
                ]
                if scores:
                    rows.append((value, statistics.fmean(scores), scores))
            out[variant] = rows
        return out


def sweep_points(param, grid, base_config, seeds=(0,), variants=None, out_dir=None):
    if not grid:
        raise InvalidArgumentError("A sweep needs a nonempty grid.")
    variants = variants or {None: {}}
    out_dir = out_dir or os.path.join(package_config["runs_root"], "sweeps", base_config.scenario)

    points = []
    for variant, overrides in variants.items():
        for value in grid:
            for seed in seeds:
                cfg = base_config.replace(seed=seed)
                for path, v in overrides.items():
                    cfg = cfg.with_value(path, v)
                cfg = cfg.with_value(param, value) if param != "recipe" else cfg.replace(recipe=value)
                name = f"{variant or 'default'}/{param}={value}/seed_{seed}"
                points.append(SweepPoint(variant, value, seed, cfg, os.path.join(out_dir, name)))
    return points


def run_point(point, param, select=True, disable_progress=True):
    """Trains one grid point and evaluates it on target_test. Returns a record or a failure."""
    try:
        cfg = point.config
        checkpoints, _ = run_recipe(cfg.recipe, cfg, point.run_dir, disable_progress=disable_progress)
        best = checkpoints[-1]
        if select:
            best, _ = select_best(checkpoints, "target_val", cfg.data.root, cfg.data.batch_size)
        record = evaluate_checkpoint(best, "target_test", cfg.data.root, cfg.data.batch_size)
        record.variant = point.variant
        record.sweep_param = param
        record.sweep_value = point.value
        return record
    except Exception as e:
        fail(f"Sweep point {point.variant} {param}={point.value} seed {point.seed} failed: {e}")
        return SweepFailure(point.variant, point.value, point.seed, traceback.format_exc())


def _run_point(args):
    return run_point(*args)


def sweep(
    param,
    grid,
    base_config,
    seeds=(0,),
    variants=None,
    out_dir=None,
    num_workers=None,
    select=True,
):
    """
    One full run per grid value, seed and variant. Failed points are recorded and the
    sweep goes on. Writes ``records.jsonl``, ``records.csv`` and ``curve.csv``.
    """
    out_dir = out_dir or os.path.join(package_config["runs_root"], "sweeps", base_config.scenario)
    points = sweep_points(param, grid, base_config, seeds, variants, out_dir)
    num_workers = package_config["num_workers"] if num_workers is None else num_workers
    info(f"Sweeping `{param}` over {list(grid)} ({len(points)} runs)...")

    jobs = [(p, param, select) for p in points]
    if num_workers > 1:
        with Pool(num_workers) as pool:
            outcomes = list(pool.imap(_run_point, jobs))
    else:
        outcomes = [_run_point(j) for j in jobs]

    result = SweepResult(param, list(grid))
    for outcome in outcomes:
        if isinstance(outcome, MetricsRecord):
            result.records.append(outcome)
        else:
            result.failures.append(outcome)

    os.makedirs(out_dir, exist_ok=True)
    write_records(result.records, os.path.join(out_dir, "records.jsonl"))
    if result.records:
        write_csv(result.records, os.path.join(out_dir, "records.csv"))
    result.curve_path = write_curves(result, os.path.join(out_dir, "curve.csv"))
    if result.failures:
        write_json(os.path.join(out_dir, "failures.json"), [f.to_dict() for f in result.failures])

    if result.failures:
        fail(f"{len(result.failures)} of {len(points)} sweep runs failed.")
    else:
        success(f"Sweep finished, curves in {result.curve_path}.")
    return result


def write_curves(result, path):
    lines = ["variant,param,value,mean,per_seed"]
    for variant, rows in result.curves().items():
        for value, mean, scores in rows:
            per_seed = ";".join(repr(s) for s in scores)
            lines.append(f"{variant or ''},{result.param},{value},{mean!r},{per_seed}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
    return path
