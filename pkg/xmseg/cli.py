"""
Command line interface.

Exit codes: 0 success, 1 unexpected error, 2 configuration or argument error,
3 data error (manifest, split misuse, missing prerequisite run), 4 failed trend check,
5 batch without points, 6 non-finite loss or gradient (a dump lands in the phase directory).
"""

import argparse
import os
import sys

from xmseg.errors import (
    ConfigError,
    DependencyError,
    EmptyBatchError,
    EmptyDataError,
    EmptyEvaluationError,
    InvalidArgumentError,
    ManifestViolationError,
    NonFiniteLossError,
    SplitMisuseError,
)
from xmseg.logging import fail, info, success, warn

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRENDS = 4
EXIT_EMPTY_BATCH = 5
EXIT_NON_FINITE = 6

DATA_ERRORS = (
    ManifestViolationError,
    SplitMisuseError,
    EmptyDataError,
    EmptyEvaluationError,
    DependencyError,
    FileNotFoundError,
)


def _csv_list(text, cast=str):
    return [cast(v) for v in text.split(",") if v != ""]


def _number(text):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def _sizes(text):
    sizes = {}
    for item in _csv_list(text):
        name, _, count = item.partition("=")
        sizes[name] = int(count)
    return sizes


def _load_config(args):
    from xmseg.trainer import TrainConfig

    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    changes = {}
    for key in ("scenario", "recipe", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "root", None):
        cfg = cfg.with_value("data.root", args.root)
    return cfg.replace(**changes) if changes else cfg


def _read_records(paths):
    from xmseg.report import read_csv, read_records

    records = []
    for path in paths:
        records += read_csv(path) if path.endswith(".csv") else read_records(path)
    return records


def cmd_generate_data(args):
    from xmseg.split import build_split

    overrides = {}
    if args.azimuth_steps:
        overrides["azimuth_steps"] = args.azimuth_steps
    if args.beam_layers:
        overrides["beam_layers"] = args.beam_layers
    build_split(
        args.scenario,
        sizes=_sizes(args.sizes) if args.sizes else None,
        root=args.root,
        num_workers=args.workers,
        profile_overrides=overrides or None,
        image_scale=args.image_scale,
        overwrite=args.overwrite,
    )
    return EXIT_OK


def cmd_list(args):
    from xmseg.utilities import scan_dataset_root

    for name, manifest in scan_dataset_root(args.root).items():
        counts = ", ".join(f"{k} {v['count']}" for k, v in manifest.get("splits", {}).items())
        info(f"{name}: {counts}")
    return EXIT_OK


def cmd_train(args):
    from xmseg.recipes import run_recipe

    cfg = _load_config(args)
    checkpoints, metrics = run_recipe(cfg.recipe, cfg, args.out)
    info(f"Last checkpoint: {checkpoints[-1]}")
    info(f"Metrics stream: {metrics}")
    return EXIT_OK


def cmd_pseudo_label(args):
    from xmseg.checkpoint import load_checkpoint
    from xmseg.pseudolabel import generate_pseudo_labels

    ckpt = load_checkpoint(args.checkpoint)
    pl_set = generate_pseudo_labels(
        ckpt.build_model(),
        ckpt.config["scenario"],
        kind=args.kind,
        keep_fraction=args.keep_fraction,
        checkpoint_id=ckpt.checkpoint_id,
        root=args.root,
        batch_size=args.batch_size,
        directory=args.out,
    )
    for name in pl_set.labels:
        kept = pl_set.retained_fraction(name)
        info(f"{name}: retained per class {[round(k, 3) for k in kept]}")
    return EXIT_OK


def cmd_evaluate(args):
    from xmseg.evaluation import evaluate_checkpoint, select_best
    from xmseg.report import render_table_row, write_records

    checkpoints = args.checkpoints
    if args.select:
        best, _ = select_best(checkpoints, "target_val", args.root, args.batch_size)
        info(f"Best checkpoint on target_val: {best}")
        checkpoints = [best]

    records = [evaluate_checkpoint(p, args.split, args.root, args.batch_size) for p in checkpoints]
    for path, record in zip(checkpoints, records):
        info(f"{os.path.basename(path)}: {render_table_row(record)} (2D / 3D / softmax avg)")
    if args.records:
        write_records(records, args.records)
        success(f"Records written to {args.records}.")
    return EXIT_OK


def cmd_sweep(args):
    from xmseg.sweep import VARIANT_SETS, sweep

    cfg = _load_config(args)
    variants = VARIANT_SETS[args.variants] if args.variants else None
    result = sweep(
        args.param,
        _csv_list(args.grid, _number),
        cfg,
        seeds=_csv_list(args.seeds, int),
        variants=variants,
        out_dir=args.out,
        num_workers=args.workers,
    )
    return EXIT_OK if result.records else EXIT_UNEXPECTED


def cmd_report(args):
    from xmseg.report import emit_report

    for path in emit_report(_read_records(args.records), args.format, args.out):
        success(f"Wrote {path}.")
    return EXIT_OK


def cmd_check_trends(args):
    from xmseg.acceptance import check_trends

    results = check_trends(_read_records(args.records), args.checks)
    failed = False
    for r in results:
        log = warn if r.skipped else (success if r.passed else fail)
        log(f"{r.name}: {r.status()}")
        for line in r.details:
            info(f"  {line}")
        failed = failed or r.passed is False
    return EXIT_TRENDS if failed else EXIT_OK


def build_parser():
    from xmseg.acceptance import TREND_CHECKS
    from xmseg.pseudolabel import PSEUDO_LABEL_KINDS
    from xmseg.recipes import RECIPES
    from xmseg.report import FORMATS
    from xmseg.split import SCENARIOS, SPLITS
    from xmseg.sweep import VARIANT_SETS

    parser = argparse.ArgumentParser(
        prog="xmseg", description="Cross-modal domain adaptation for 3D segmentation."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="Materialize the splits of a synthetic scenario")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--sizes", help="e.g. source_train=400,target_val=50")
    p.add_argument("--root", help="Dataset root directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--image-scale", type=float, default=1.0)
    p.add_argument("--azimuth-steps", type=int, default=None)
    p.add_argument("--beam-layers", type=int, default=None)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("list", help="List materialized scenarios")
    p.add_argument("--root", help="Dataset root directory")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("train", help="Run a training recipe")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--recipe", choices=sorted(RECIPES))
    p.add_argument("--config", help="JSON TrainConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--root", help="Dataset root directory")
    p.add_argument("--out", help="Run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pseudo-label", help="Generate pseudo-labels from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", default="per_stream", choices=sorted(PSEUDO_LABEL_KINDS))
    p.add_argument("--keep-fraction", type=float, default=0.8)
    p.add_argument("--root", help="Dataset root directory")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("evaluate", help="Evaluate checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--split", default="target_test", choices=SPLITS)
    p.add_argument("--select", action="store_true", help="Evaluate only the best checkpoint on target_val")
    p.add_argument("--root", help="Dataset root directory")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--records", help="JSONL output path for the metrics records")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="Sweep one config parameter")
    p.add_argument("--config", help="JSON TrainConfig")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--recipe", choices=sorted(RECIPES))
    p.add_argument("--param", required=True, help="Dotted config path, e.g. loss_weights.lambda_t")
    p.add_argument("--grid", required=True, help="Comma separated values")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", choices=sorted(VARIANT_SETS))
    p.add_argument("--root", help="Dataset root directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="Render records as table, CSV or plot")
    p.add_argument("records", nargs="+", help="JSONL or CSV record files")
    p.add_argument("--format", default="table", choices=FORMATS)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check-trends", help="Check the adaptation trends on records")
    p.add_argument("records", nargs="+", help="JSONL or CSV record files")
    p.add_argument("--checks", nargs="*", choices=sorted(TREND_CHECKS))
    p.set_defaults(func=cmd_check_trends)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as e:
        fail(str(e))
        return EXIT_CONFIG
    except DATA_ERRORS as e:
        fail(str(e))
        return EXIT_DATA
    except EmptyBatchError as e:
        fail(str(e))
        return EXIT_EMPTY_BATCH
    except NonFiniteLossError as e:
        fail(str(e))
        return EXIT_NON_FINITE
    except Exception as e:
        fail(f"Unexpected error: {e!r}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
