"""
Trend checks over evaluation records. Every check compares medians over seeds; a
check without the records it needs is skipped, not failed.
"""

import statistics
from dataclasses import dataclass, field

STREAMS = ("2d", "3d")


@dataclass
class TrendResult:
    name: str
    passed: bool = None  # None: skipped
    details: list = field(default_factory=list)

    @property
    def skipped(self):
        return self.passed is None

    def status(self):
        return "skipped" if self.skipped else ("passed" if self.passed else "FAILED")


def _select(records, scenario=None, recipe=None, variant=None, sweep_value=None):
    out = []
    for r in records:
        if scenario is not None and r.scenario != scenario:
            continue
        if recipe is not None and r.recipe != recipe:
            continue
        if variant != "*" and r.variant != variant:
            continue
        if sweep_value is not None and r.sweep_value != sweep_value:
            continue
        out.append(r)
    return out


def _plain(records):
    """Records of plain recipe runs, not points of a parameter sweep."""
    return [r for r in records if r.sweep_param in (None, "recipe")]


def median_of(records, stream):
    values = [getattr(r, f"miou_{stream}") for r in records]
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def _scenarios(records):
    return list(dict.fromkeys(r.scenario for r in records))


def check_adaptation(records, margin=0.02):
    """xmuda beats the source-only baseline on both streams in every scenario."""
    result = TrendResult("adaptation")
    records = _plain(records)
    for scenario in _scenarios(records):
        base = _select(records, scenario, "baseline")
        xm = _select(records, scenario, "xmuda")
        if not base or not xm:
            continue
        for s in STREAMS:
            gain = median_of(xm, s) - median_of(base, s)
            ok = gain >= margin
            result.details.append(f"{scenario} {s}: xmuda - baseline = {100 * gain:+.1f}")
            result.passed = ok if result.passed is None else result.passed and ok
    return result


def check_complementarity(records, tolerance=0.005, min_strict=2):
    """xmuda_pl is not worse than the better of xmuda and pl, and strictly better on most scenarios."""
    result = TrendResult("complementarity")
    records = _plain(records)
    strict, seen = 0, 0
    ok = True
    for scenario in _scenarios(records):
        groups = {r: _select(records, scenario, r) for r in ("xmuda", "pl", "xmuda_pl")}
        if not all(groups.values()):
            continue
        seen += 1
        better = True
        for s in STREAMS:
            combined = median_of(groups["xmuda_pl"], s)
            best_single = max(median_of(groups["xmuda"], s), median_of(groups["pl"], s))
            ok = ok and combined >= best_single - tolerance
            better = better and combined > best_single
            result.details.append(
                f"{scenario} {s}: xmuda_pl {100 * combined:.1f} vs best single {100 * best_single:.1f}"
            )
        strict += better
    if seen:
        result.passed = ok and strict >= min(min_strict, seen)
    return result


def check_dual_head(records, margin=0.03, param="loss_weights.lambda_t"):
    """At the largest swept weight the dual head wins, and the single head does not recover."""
    result = TrendResult("dual_head")
    swept = [r for r in records if r.sweep_param == param]
    dual = _select(swept, variant="dual")
    single = _select(swept, variant="single")
    if not dual or not single:
        return result

    grid = sorted(set(r.sweep_value for r in single))
    top = grid[-1]
    gap = median_of(_select(dual, sweep_value=top, variant="dual"), "avg") - median_of(
        _select(single, sweep_value=top, variant="single"), "avg"
    )
    curve = [median_of(_select(single, sweep_value=v, variant="single"), "avg") for v in grid]
    upper = curve[len(curve) // 2 :]
    monotone = all(b <= a for a, b in zip(upper, upper[1:]))
    result.details.append(f"{param}={top}: dual - single = {100 * gap:+.1f}")
    result.details.append(f"single head over the top half: {[round(100 * v, 1) for v in upper]}")
    result.passed = gap >= margin and monotone
    return result


def check_source_loss(records, margin=0.01):
    """Mimicry on source and target beats target-only mimicry on both streams."""
    result = TrendResult("source_loss")
    records = _plain(records)
    for scenario in _scenarios(records):
        both = _select(records, scenario, "xmuda", "source_target")
        target_only = _select(records, scenario, "xmuda", "target_only")
        if not both or not target_only:
            continue
        for s in STREAMS:
            gain = median_of(both, s) - median_of(target_only, s)
            ok = gain >= margin
            result.details.append(f"{scenario} {s}: source+target - target only = {100 * gain:+.1f}")
            result.passed = ok if result.passed is None else result.passed and ok
    return result


def check_oracle(records, tolerance=0.005):
    """Supervised target training with mimicry keeps every column and improves the ensemble."""
    result = TrendResult("oracle")
    records = _plain(records)
    for scenario in _scenarios(records):
        plain = _select(records, scenario, "oracle", "plain")
        xm = _select(records, scenario, "oracle", "xm")
        if not plain or not xm:
            continue
        ok = all(median_of(xm, s) >= median_of(plain, s) - tolerance for s in ("2d", "3d", "avg"))
        ok = ok and median_of(xm, "avg") > median_of(plain, "avg")
        result.details.append(
            f"{scenario}: avg {100 * median_of(plain, 'avg'):.1f} -> {100 * median_of(xm, 'avg'):.1f}"
        )
        result.passed = ok if result.passed is None else result.passed and ok
    return result


def check_fusion(records, margin=0.005, scenario="country"):
    """xmuda_pl_fusion beats vanilla fusion with pseudo-labels."""
    result = TrendResult("fusion")
    records = _plain(records)
    ours = _select(records, scenario, "xmuda_pl_fusion")
    vanilla = _select(records, scenario, "fusion_pl")
    if not ours or not vanilla:
        return result
    gain = median_of(ours, "fuse") - median_of(vanilla, "fuse")
    result.details.append(f"{scenario}: xmuda_pl_fusion - fusion_pl = {100 * gain:+.1f}")
    result.passed = gain >= margin
    return result


TREND_CHECKS = {
    "adaptation": check_adaptation,
    "complementarity": check_complementarity,
    "dual_head": check_dual_head,
    "source_loss": check_source_loss,
    "oracle": check_oracle,
    "fusion": check_fusion,
}


def check_trends(records, names=None):
    names = names or list(TREND_CHECKS)
    return [TREND_CHECKS[n](records) for n in names]
