"""Turn a simulation run into totals, distribution summaries, and files.

Money totals are exact running sums of the underlying ledgers (no rounding
happens before aggregation), percentiles use the nearest-rank convention,
and all files are written with full-precision decimal floats so reruns can
be compared byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from marginsim.costs import CostModel, DayLedger
from marginsim.engine import ComparisonTable, RunResult, SimulationConfig, StepLogRow
from marginsim.errors import DomainError
from marginsim.traces import Datacenter, MetricKind, error_cdf


def nearest_rank(sorted_values: list[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    if not sorted_values:
        raise DomainError("percentile of an empty list")
    if not (0.0 < pct <= 100.0):
        raise DomainError(f"pct must be in (0, 100], got {pct}")
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class Totals:
    potential: float
    penalty: float
    net: float


@dataclass
class MarginSummary:
    """Distribution of one (host, metric) margin series over a run."""

    host_id: str
    metric: MetricKind
    minimum: float
    median: float
    p75: float
    outliers: list[float]


@dataclass
class EvaluationReport:
    strategy: str
    day_range: tuple[int, int]
    step_minutes: int
    ledgers: list[DayLedger]
    host_totals: dict[str, Totals]
    totals: Totals
    margin_summaries: list[MarginSummary]
    margin_series: dict[tuple[str, MetricKind], list[tuple[int, float]]]
    error_cdfs: dict[str, dict[str, list[tuple[float, float]]]]
    step_log: list[StepLogRow]


def margin_summary(host_id: str, metric: MetricKind, margins: list[float]) -> MarginSummary:
    """Min / median / 75th percentile plus boxplot outliers (1.5 IQR fences)."""
    ordered = sorted(margins)
    q1 = nearest_rank(ordered, 25)
    q3 = nearest_rank(ordered, 75)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    outliers = [v for v in ordered if v < lo_fence or v > hi_fence]
    return MarginSummary(host_id, metric, ordered[0], nearest_rank(ordered, 50), q3, outliers)


def build_report(strategy: str, dc: Datacenter, cost: CostModel,
                 sim: SimulationConfig, result: RunResult) -> EvaluationReport:
    host_order = [h.spec.host_id for h in dc.hosts]
    sums = {hid: [0.0, 0.0, 0.0] for hid in host_order}
    for ledger in result.ledgers:
        acc = sums[ledger.host_id]
        acc[0] += ledger.potential_saving
        acc[1] += ledger.penalty
        acc[2] += ledger.net_saving
    host_totals = {hid: Totals(*sums[hid]) for hid in host_order}
    grand = [0.0, 0.0, 0.0]
    for hid in host_order:
        grand[0] += sums[hid][0]
        grand[1] += sums[hid][1]
        grand[2] += sums[hid][2]

    series: dict[tuple[str, MetricKind], list[tuple[int, float]]] = {
        (hid, m): [] for hid in host_order for m in (MetricKind.CPU, MetricKind.RAM)}
    for outcome in result.outcomes:
        for m, margin in outcome.margins.items():
            series[(outcome.host_id, m)].append((outcome.step_index, margin))
    summaries = [
        margin_summary(hid, m, [margin for _, margin in series[(hid, m)]])
        for hid in host_order for m in (MetricKind.CPU, MetricKind.RAM)
    ]

    spd = dc.steps_per_day
    lo, hi = sim.day_range
    cdfs = {
        m.value: error_cdf(dc, m, start_step=lo * spd, end_step=hi * spd)
        for m in (MetricKind.CPU, MetricKind.RAM)
    }
    return EvaluationReport(strategy, sim.day_range, sim.step_minutes, result.ledgers,
                            host_totals, Totals(*grand), summaries, series, cdfs,
                            result.step_log)


LEDGER_HEADER = ["host", "day", "violation_min", "potential", "penalty", "net"]
MARGIN_HEADER = ["host", "metric", "step", "margin"]
CDF_HEADER = ["host", "error", "cum_prob"]
TRAINING_LOG_HEADER = ["step", "critic_loss", "mean_reward", "mean_margin"]
COMPARISON_HEADER = ["strategy", "potential", "penalty", "net", "net_ratio", "penalty_ratio"]


def write_report_files(report: EvaluationReport, outdir: str | Path) -> list[Path]:
    """Write report.json, ledger.csv, margins.csv, and one CDF file per
    metric into `outdir`; returns the paths written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    ledger_path = outdir / "ledger.csv"
    with ledger_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_HEADER)
        for led in report.ledgers:
            writer.writerow([led.host_id, led.day_index, led.violation_minutes,
                             repr(led.potential_saving), repr(led.penalty),
                             repr(led.net_saving)])
    written.append(ledger_path)

    margins_path = outdir / "margins.csv"
    with margins_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MARGIN_HEADER)
        for (hid, metric), points in report.margin_series.items():
            for step, margin in points:
                writer.writerow([hid, metric.value, step, repr(margin)])
    written.append(margins_path)

    for metric_value, by_host in report.error_cdfs.items():
        cdf_path = outdir / f"cdf_{metric_value}.csv"
        with cdf_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CDF_HEADER)
            for hid in sorted(by_host):
                for err, prob in by_host[hid]:
                    writer.writerow([hid, repr(err), repr(prob)])
        written.append(cdf_path)

    report_path = outdir / "report.json"
    with report_path.open("w") as fh:
        json.dump(_report_dict(report), fh, indent=1)
        fh.write("\n")
    written.append(report_path)
    return written


def _report_dict(report: EvaluationReport) -> dict:
    return {
        "strategy": report.strategy,
        "day_range": list(report.day_range),
        "step_minutes": report.step_minutes,
        "totals": _totals_dict(report.totals),
        "host_totals": {hid: _totals_dict(t) for hid, t in report.host_totals.items()},
        "ledger": [
            {
                "host": led.host_id,
                "day": led.day_index,
                "violation_minutes": led.violation_minutes,
                "potential": led.potential_saving,
                "penalty": led.penalty,
                "net": led.net_saving,
            }
            for led in report.ledgers
        ],
        "margin_summary": [
            {
                "host": s.host_id,
                "metric": s.metric.value,
                "min": s.minimum,
                "median": s.median,
                "p75": s.p75,
                "outliers": s.outliers,
            }
            for s in report.margin_summaries
        ],
        "error_cdf": {
            metric: {hid: [[e, p] for e, p in points] for hid, points in by_host.items()}
            for metric, by_host in report.error_cdfs.items()
        },
    }


def write_training_log(step_log: list[StepLogRow], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_HEADER)
        for row in step_log:
            writer.writerow([row.step_index, repr(row.critic_loss),
                             repr(row.mean_reward), repr(row.mean_margin)])


def write_comparison(table: ComparisonTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_HEADER)
        for row in table.rows:
            writer.writerow([row.strategy, repr(row.potential), repr(row.penalty),
                             repr(row.net), repr(row.net_ratio), repr(row.penalty_ratio)])


def render_comparison(table: ComparisonTable) -> str:
    """Fixed-width console table; money to 4 decimals, ratios to 3."""
    headers = ["strategy", "potential", "penalty", "net",
               f"net/{table.baseline}", f"penalty/{table.baseline}"]
    body = [
        [row.strategy, f"{row.potential:.4f}", f"{row.penalty:.4f}", f"{row.net:.4f}",
         _fmt_ratio(row.net_ratio), _fmt_ratio(row.penalty_ratio)]
        for row in table.rows
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)


def _fmt_ratio(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.3f}"


def _totals_dict(t: Totals) -> dict:
    return {"potential": t.potential, "penalty": t.penalty, "net": t.net}
