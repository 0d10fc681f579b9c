import csv
import io
import json
import os
import statistics
from dataclasses import fields

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from xmseg.errors import EmptyDataError, UnknownNameError  # noqa: E402
from xmseg.evaluation import MetricsRecord  # noqa: E402

FORMATS = ("table", "csv", "plot")

CSV_FIELDS = [f.name for f in fields(MetricsRecord) if f.name != "confusion"]
_INT_FIELDS = ("seed", "iteration")
_FLOAT_FIELDS = ("miou_2d", "miou_3d", "miou_avg", "miou_fuse")
_JSON_FIELDS = ("iou_2d", "iou_3d", "iou_avg", "iou_fuse", "sweep_value")


def _percent(value):
    return "-" if value is None else f"{100 * value:.1f}"


def render_table_row(record):
    """'2D / 3D / softmax avg' in percent with one decimal."""
    return " / ".join(_percent(v) for v in (record.miou_2d, record.miou_3d, record.miou_avg))


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def aggregate(records):
    """Seed medians per (scenario, recipe, variant, sweep value), in first-seen order."""
    groups = {}
    for r in records:
        key = (r.scenario, r.recipe, r.variant, r.sweep_param, json.dumps(r.sweep_value))
        groups.setdefault(key, []).append(r)

    out = []
    for (scenario, recipe, variant, param, _), group in groups.items():
        out.append(
            MetricsRecord(
                scenario=scenario,
                recipe=recipe,
                seed=len(group),
                checkpoint_id="median",
                split=group[0].split,
                miou_2d=_median(r.miou_2d for r in group),
                miou_3d=_median(r.miou_3d for r in group),
                miou_avg=_median(r.miou_avg for r in group),
                miou_fuse=_median(r.miou_fuse for r in group),
                variant=variant,
                sweep_param=param,
                sweep_value=group[0].sweep_value,
            )
        )
    return out


def _row_label(record):
    label = record.recipe or "?"
    if record.variant:
        label += f" [{record.variant}]"
    if record.sweep_param:
        label += f" {record.sweep_param}={record.sweep_value}"
    return label


def render_table(records):
    """Seed-median rows grouped by scenario, columns 2D / 3D / softmax avg (and fusion)."""
    rows = aggregate(records)
    width = max(len(_row_label(r)) for r in rows)
    lines = []
    for scenario in dict.fromkeys(r.scenario for r in rows):
        lines.append(f"## {scenario}")
        lines.append(f"{'recipe'.ljust(width)} | 2D / 3D / softmax avg | fusion | seeds")
        for r in rows:
            if r.scenario == scenario:
                lines.append(
                    f"{_row_label(r).ljust(width)} | {render_table_row(r).ljust(21)} | "
                    + f"{_percent(r.miou_fuse).rjust(6)} | {r.seed}"
                )
        lines.append("")
    return "\n".join(lines)


def _encode(name, value):
    if name in _JSON_FIELDS:
        return "" if value is None else json.dumps(value)
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def _decode(name, text):
    if text == "":
        return None
    if name in _JSON_FIELDS:
        return json.loads(text)
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


def format_csv(records):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in records:
        writer.writerow([_encode(name, getattr(r, name)) for name in CSV_FIELDS])
    return buffer.getvalue()


def parse_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    return [
        MetricsRecord(**{name: _decode(name, cell) for name, cell in zip(header, row)})
        for row in reader
        if row
    ]


def write_csv(records, path):
    with open(path, "w", newline="") as f:
        f.write(format_csv(records))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return parse_csv(f.read())


def write_records(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def read_records(path):
    with open(path) as f:
        return [MetricsRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def plot_curves(records, path, title=None):
    """mIoU over the swept value, one line per variant and stream, as SVG."""
    swept = [r for r in records if r.sweep_param is not None]
    if not swept:
        raise EmptyDataError("No sweep records to plot.")

    plt.rcParams["svg.hashsalt"] = "xmseg"
    plt.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(5, 3.5))

    rows = aggregate(swept)
    for variant in dict.fromkeys(r.variant for r in rows):
        points = sorted(
            ((r.sweep_value, r) for r in rows if r.variant == variant), key=lambda p: p[0]
        )
        xs = [x for x, _ in points]
        for stream, style in (("2d", "-o"), ("3d", "--s")):
            ys = [100 * getattr(r, f"miou_{stream}") for _, r in points]
            ax.plot(xs, ys, style, label=f"{variant or 'default'} {stream.upper()}")

    ax.set_xlabel(swept[0].sweep_param)
    ax.set_ylabel("mIoU")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_report(records, fmt="table", out=None):
    """Writes the report file(s) into directory ``out`` and returns their paths."""
    if fmt not in FORMATS:
        raise UnknownNameError("report format", fmt, FORMATS)
    if not records:
        raise EmptyDataError("Cannot report on zero records.")
    out = out or "."
    os.makedirs(out, exist_ok=True)

    if fmt == "table":
        path = os.path.join(out, "report.md")
        with open(path, "w") as f:
            f.write(render_table(records))
        return [path]
    if fmt == "csv":
        return [write_csv(records, os.path.join(out, "records.csv"))]
    return [plot_curves(records, os.path.join(out, "curves.svg"))]
