"""Cohort statistics: improvement deltas, imputation, rank tests, effects.

Works on per-participant tables of task metric rows keyed by repetition
label.  The comparison of interest is the change from the baseline
repetition to a later one, compared between an experimental and a control
arm with a Mann-Whitney U test, plus a Cohen's d effect size oriented so
that positive means the experimental arm improved more.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

from .metrics import METRIC_KINDS, METRIC_ROWS

ARM_EXPERIMENTAL = "experimental"
ARM_CONTROL = "control"

BASELINE_LABEL = "baseline"
REPETITION_LABELS = ("baseline", "rep2", "rep3", "rep4", "final")

# Metrics where a smaller raw value means better performance.  Their deltas
# are negated before effect sizes so positive d = experimental improved
# more.  The movement rate has no agreed direction, so its d stays raw.
LOWER_IS_BETTER = frozenset(
    name for name, _, _ in METRIC_ROWS if name != "Movements (count/s)"
)

SIGNIFICANCE_LEVEL = 0.05

METHOD_AUTO = "auto"
METHOD_EXACT = "exact"
METHOD_APPROX = "approx"

# Largest combined sample the exact permutation distribution enumerates.
EXACT_LIMIT = 12


class AnalyticsError(ValueError):
    pass


@dataclass
class ParticipantSeries:
    """All repetitions of one participant, as metric-name -> value rows."""

    participant: str
    arm: str
    repetitions: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def add(self, label: str, row: Dict[str, Optional[float]]) -> None:
        if label in self.repetitions:
            raise AnalyticsError(
                f"duplicate repetition {label!r} for participant {self.participant!r}"
            )
        self.repetitions[label] = dict(row)


def improvement(
    series: ParticipantSeries, label: str, baseline: str = BASELINE_LABEL
) -> Dict[str, Optional[float]]:
    """Per-metric change from baseline to `label`: value(label) - value(baseline).

    Metrics missing in either endpoint come back as None, to be filled by
    imputation at the cohort level.  A missing repetition is an error.
    """
    if baseline not in series.repetitions:
        raise AnalyticsError(
            f"participant {series.participant!r} has no {baseline!r} repetition"
        )
    if label not in series.repetitions:
        raise AnalyticsError(
            f"participant {series.participant!r} has no {label!r} repetition"
        )
    before = series.repetitions[baseline]
    after = series.repetitions[label]
    out: Dict[str, Optional[float]] = {}
    for name, _, _ in METRIC_ROWS:
        b = before.get(name)
        a = after.get(name)
        out[name] = None if b is None or a is None else a - b
    return out


def impute(columns: Dict[str, List[Optional[float]]]) -> Dict[str, List[float]]:
    """Fill missing values per metric column.

    Continuous metrics take the column mean of the observed values; count
    metrics take the median, which stays on the integer grid.  A column with
    no observed value at all cannot be filled.
    """
    out: Dict[str, List[float]] = {}
    for metric, values in columns.items():
        observed = [v for v in values if v is not None]
        if not observed:
            raise AnalyticsError(f"metric {metric!r} has no observed values to impute from")
        if METRIC_KINDS.get(metric) == "count":
            fill = float(statistics.median(observed))
        else:
            fill = sum(observed) / len(observed)
        out[metric] = [fill if v is None else v for v in values]
    return out


def _midranks(values: Sequence[float]) -> List[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _exact_p(u: float, n_a: int, n_b: int) -> float:
    """Two-sided p by enumerating every rank assignment (no ties)."""
    total = 0
    at_most = 0
    all_ranks = range(1, n_a + n_b + 1)
    for combo in combinations(all_ranks, n_a):
        u_combo = sum(combo) - n_a * (n_a + 1) / 2.0
        u_min = min(u_combo, n_a * n_b - u_combo)
        total += 1
        if u_min <= u + 1e-12:
            at_most += 1
    return at_most / total


def _approx_p(u: float, pooled: Sequence[float], n_a: int, n_b: int) -> float:
    """Two-sided p from the normal approximation with tie and continuity
    corrections."""
    n = n_a + n_b
    counts: Dict[float, int] = {}
    for v in pooled:
        counts[v] = counts.get(v, 0) + 1
    tie_term = sum(c ** 3 - c for c in counts.values())
    sigma_sq = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0.0:
        return 1.0
    z = (u - n_a * n_b / 2.0 + 0.5) / math.sqrt(sigma_sq)
    p = math.erfc(-z / math.sqrt(2.0))  # 2 * Phi(z) for the lower tail
    return min(1.0, p)


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], method: str = METHOD_AUTO
) -> Tuple[float, float]:
    """Two-sided Mann-Whitney U test.

    Returns (U, p) where U is the smaller of the two one-sided statistics,
    computed with midrank tie handling.  Under the default method, small
    untied samples (combined n of 12 or fewer) get the exact permutation
    distribution; larger or tied samples the normal approximation.  Passing
    "exact" or "approx" forces one route; "exact" rejects tied data.
    """
    n_a, n_b = len(a), len(b)
    if n_a == 0 or n_b == 0:
        raise AnalyticsError("mann_whitney_u requires non-empty samples")
    if method not in (METHOD_AUTO, METHOD_EXACT, METHOD_APPROX):
        raise AnalyticsError(f"unknown method {method!r}")
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    u_a = sum(ranks[:n_a]) - n_a * (n_a + 1) / 2.0
    u = min(u_a, n_a * n_b - u_a)

    has_ties = len(set(pooled)) != len(pooled)
    if method == METHOD_EXACT or (
        method == METHOD_AUTO and not has_ties and n_a + n_b <= EXACT_LIMIT
    ):
        if has_ties:
            raise AnalyticsError("exact enumeration requires untied data")
        return u, _exact_p(u, n_a, n_b)
    return u, _approx_p(u, pooled, n_a, n_b)


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Effect size (mean(a) - mean(b)) / pooled sample SD."""
    n_a, n_b = len(a), len(b)
    if n_a < 2 or n_b < 2:
        raise AnalyticsError("cohens_d requires at least two values per sample")
    mean_a = sum(a) / n_a
    mean_b = sum(b) / n_b
    var_a = sum((v - mean_a) ** 2 for v in a) / (n_a - 1)
    var_b = sum((v - mean_b) ** 2 for v in b) / (n_b - 1)
    pooled = ((n_a - 1) * var_a + (n_b - 1) * var_b) / (n_a + n_b - 2)
    if pooled <= 0.0:
        raise AnalyticsError("cohens_d undefined: pooled standard deviation is zero")
    return (mean_a - mean_b) / math.sqrt(pooled)


@dataclass(frozen=True)
class MetricComparison:
    """One table row: raw-delta summaries per arm plus test results.

    `cohens_d` is oriented so positive means the experimental arm improved
    more (the raw sign is kept for the movement rate, which has no agreed
    better direction).  None when the pooled SD is zero.
    """

    metric: str
    experimental_mean: float
    experimental_sd: float
    control_mean: float
    control_sd: float
    u_statistic: float
    p_value: float
    cohens_d: Optional[float]
    n_experimental: int
    n_control: int

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


@dataclass(frozen=True)
class EffectCell:
    metric: str
    repetition: str
    cohens_d: Optional[float]
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


@dataclass(frozen=True)
class CohortReport:
    label: str
    comparisons: Tuple[MetricComparison, ...]
    grid: Tuple[EffectCell, ...]


def _collect_deltas(
    cohort: Sequence[ParticipantSeries], arm: str, label: str
) -> Dict[str, List[Optional[float]]]:
    columns: Dict[str, List[Optional[float]]] = {name: [] for name, _, _ in METRIC_ROWS}
    for series in cohort:
        if series.arm != arm:
            continue
        deltas = improvement(series, label)
        for name in columns:
            columns[name].append(deltas[name])
    return columns


def compare_arms(
    cohort: Sequence[ParticipantSeries], label: str
) -> List[MetricComparison]:
    """Baseline-to-`label` delta comparison for every metric, table order."""
    exp_cols = impute(_collect_deltas(cohort, ARM_EXPERIMENTAL, label))
    ctl_cols = impute(_collect_deltas(cohort, ARM_CONTROL, label))
    out: List[MetricComparison] = []
    for name, _, _ in METRIC_ROWS:
        exp = exp_cols[name]
        ctl = ctl_cols[name]
        u, p = mann_whitney_u(exp, ctl)
        try:
            d: Optional[float] = cohens_d(exp, ctl)
        except AnalyticsError:
            d = None
        if d is not None and name in LOWER_IS_BETTER:
            d = -d
        out.append(
            MetricComparison(
                metric=name,
                experimental_mean=sum(exp) / len(exp),
                experimental_sd=statistics.stdev(exp) if len(exp) > 1 else 0.0,
                control_mean=sum(ctl) / len(ctl),
                control_sd=statistics.stdev(ctl) if len(ctl) > 1 else 0.0,
                u_statistic=u,
                p_value=p,
                cohens_d=d,
                n_experimental=len(exp),
                n_control=len(ctl),
            )
        )
    return out


def cohort_report(cohort: Sequence[ParticipantSeries], label: str = "final") -> CohortReport:
    """Full study report: final-repetition table plus the 15 x 4 effect grid."""
    if not any(s.arm == ARM_EXPERIMENTAL for s in cohort):
        raise AnalyticsError("cohort has no experimental participants")
    if not any(s.arm == ARM_CONTROL for s in cohort):
        raise AnalyticsError("cohort has no control participants")
    comparisons = tuple(compare_arms(cohort, label))
    cells: List[EffectCell] = []
    for rep in REPETITION_LABELS[1:]:
        for c in compare_arms(cohort, rep):
            cells.append(
                EffectCell(
                    metric=c.metric,
                    repetition=rep,
                    cohens_d=c.cohens_d,
                    p_value=c.p_value,
                )
            )
    return CohortReport(label=label, comparisons=comparisons, grid=tuple(cells))


def _format_mean_sd(mean: float, sd: float) -> str:
    return f"{mean:.2f} ({sd:.2f})"


def report_table(report: CohortReport) -> str:
    """Plain-text comparison table: one metric per row, mean (SD) per arm."""
    n_exp = report.comparisons[0].n_experimental if report.comparisons else 0
    n_ctl = report.comparisons[0].n_control if report.comparisons else 0
    header = (
        "Metric",
        f"Experimental (N={n_exp})",
        f"Control (N={n_ctl})",
        "P value",
    )
    rows: List[Tuple[str, str, str, str]] = [header]
    for c in report.comparisons:
        p_text = f"{c.p_value:.2f}"
        if c.significant:
            p_text += " *"
        rows.append(
            (
                c.metric,
                _format_mean_sd(c.experimental_mean, c.experimental_sd),
                _format_mean_sd(c.control_mean, c.control_sd),
                p_text,
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for r in rows:
        lines.append(
            "  ".join(
                r[i].ljust(widths[i]) if i == 0 else r[i].rjust(widths[i]) for i in range(4)
            )
        )
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def report_dict(report: CohortReport) -> Dict:
    return {
        "repetition": report.label,
        "rows": [
            {
                "metric": c.metric,
                "experimental_mean": c.experimental_mean,
                "experimental_sd": c.experimental_sd,
                "control_mean": c.control_mean,
                "control_sd": c.control_sd,
                "u_statistic": c.u_statistic,
                "p_value": c.p_value,
                "cohens_d": c.cohens_d,
                "significant": c.significant,
                "n_experimental": c.n_experimental,
                "n_control": c.n_control,
            }
            for c in report.comparisons
        ],
        "grid": [
            {
                "metric": cell.metric,
                "repetition": cell.repetition,
                "cohens_d": cell.cohens_d,
                "p_value": cell.p_value,
                "significant": cell.significant,
            }
            for cell in report.grid
        ],
    }


def grid_csv(report: CohortReport) -> str:
    """Effect grid as CSV: metric, repetition, cohens_d, p_value, significant."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "repetition", "cohens_d", "p_value", "significant"])
    for cell in report.grid:
        writer.writerow(
            [
                cell.metric,
                cell.repetition,
                "" if cell.cohens_d is None else f"{cell.cohens_d:.5f}",
                f"{cell.p_value:.5f}",
                "1" if cell.significant else "0",
            ]
        )
    return buf.getvalue()
