"""The step-by-step simulator: replay a trace under margin strategies.

Each step, per host: every metric's strategy picks a margin from information
up to the previous step only, containers are fit into the remaining
headroom, and the step is checked for a violation (actual usage above
prediction plus margin on either metric).  Days settle independently:
violation clocks reset at midnight, strategy and agent state carry across.

In training mode the day's transitions are buffered, the settled penalty is
attributed back onto the day's rewards, and only then is the day fed to the
learning agents in step order, so the reward an agent sees is consistent
with what the day actually earned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from marginsim.agent import AgentPool, Transition
from marginsim.costs import (
    CostModel,
    DayLedger,
    accumulate_violation,
    containers_fitting,
    settle_day,
)
from marginsim.errors import DomainError
from marginsim.strategies import LearnedMargin, MarginStrategy, Observation
from marginsim.traces import Datacenter, MetricKind

METRICS = (MetricKind.CPU, MetricKind.RAM)

REWARD_ATTRIBUTIONS = ("violation_spread", "day_end_lump")


@dataclass(frozen=True)
class SimulationConfig:
    """One run: mode, day range, step grid, and the global seed."""

    seed: int
    day_range: tuple[int, int]
    mode: str = "evaluate"
    step_minutes: int = 3
    reward_attribution: str = "violation_spread"

    def validate(self) -> None:
        if self.mode not in ("train", "evaluate"):
            raise DomainError(f"mode must be 'train' or 'evaluate', got {self.mode!r}")
        lo, hi = self.day_range
        if lo < 0 or hi <= lo:
            raise DomainError(f"day_range {self.day_range} must be a non-empty [start, end)")
        if self.reward_attribution not in REWARD_ATTRIBUTIONS:
            raise DomainError(
                f"reward_attribution must be one of {REWARD_ATTRIBUTIONS}, "
                f"got {self.reward_attribution!r}")


@dataclass(frozen=True)
class StepOutcome:
    """Everything decided at one (host, step)."""

    host_id: str
    step_index: int
    margins: dict[MetricKind, float]
    nb_containers: int
    violated: bool
    effective_errors: dict[MetricKind, float]


@dataclass
class StepLogRow:
    """Per-step training aggregates across hosts and metrics."""

    step_index: int
    critic_loss: float
    mean_reward: float
    mean_margin: float


@dataclass
class RunResult:
    ledgers: list[DayLedger]
    outcomes: list[StepOutcome]
    start_step: int
    step_log: list[StepLogRow] = field(default_factory=list)


def train_test_split(dc: Datacenter, train_fraction: float) -> tuple[tuple[int, int], tuple[int, int]]:
    """Chronological day split; both sides are non-empty."""
    if not (0.0 < train_fraction < 1.0):
        raise DomainError(f"train_fraction must be in (0, 1), got {train_fraction}")
    days = dc.num_days()
    if days < 2:
        raise DomainError(f"need at least 2 days to split, trace has {days}")
    train_days = min(max(int(math.floor(days * train_fraction)), 1), days - 1)
    return (0, train_days), (train_days, days)


def reward_scale_for(dc: Datacenter, cost: CostModel, step_minutes: int) -> float:
    """Normalization constant: one step's earnings on the roomiest empty host."""
    best = max(containers_fitting(cost, h.spec, 1.0, 1.0) for h in dc.hosts)
    return cost.price_per_minute * step_minutes * max(best, 1)


def _window(history: list[float], size: int) -> tuple[float, ...]:
    if len(history) >= size:
        return tuple(history[-size:])
    return (0.0,) * (size - len(history)) + tuple(history)


def _state_vector(window: tuple[float, ...]) -> np.ndarray:
    return np.clip(np.asarray(window, dtype=float), -1.0, 1.0)


def run(dc: Datacenter, cost: CostModel, sim: SimulationConfig,
        strategies: dict[MetricKind, MarginStrategy]) -> RunResult:
    """Replay `dc` over `sim.day_range` under the given per-metric strategies.

    Margins at step t are chosen from windows ending at t-1 (front-padded
    with zeros at the start of the range), so there is no lookahead.  In
    train mode the learned strategies' agents receive one transition per
    (host, step) with the day's penalty attributed per
    `sim.reward_attribution`.
    """
    dc.validate()
    cost.validate()
    sim.validate()
    if sim.step_minutes != dc.step_minutes:
        raise DomainError(
            f"simulation step {sim.step_minutes} != trace step {dc.step_minutes}")
    lo, hi = sim.day_range
    if hi > dc.num_days():
        raise DomainError(f"day_range {sim.day_range} exceeds trace days {dc.num_days()}")
    if set(strategies) != set(METRICS):
        raise DomainError("need exactly one strategy per metric")

    learned = {m for m, s in strategies.items() if isinstance(s, LearnedMargin)}
    for m in learned:
        if strategies[m].explore != (sim.mode == "train"):
            raise DomainError(
                f"{m.value}: learned strategy exploration must match the mode")
    if sim.mode == "train" and not learned:
        raise DomainError("train mode requires at least one learned strategy")

    spd = dc.steps_per_day
    ts = sim.step_minutes
    ppm = cost.price_per_minute
    hosts = dc.hosts
    usage = {(h.spec.host_id, m): np.array([s.usage for s in h.series[m]])
             for h in hosts for m in METRICS}
    pred = {(h.spec.host_id, m): np.array([s.prediction for s in h.series[m]])
            for h in hosts for m in METRICS}

    errors: dict[tuple[str, MetricKind], list[float]] = {
        (h.spec.host_id, m): [] for h in hosts for m in METRICS}
    usage_hist: dict[tuple[str, MetricKind], list[float]] = {
        (h.spec.host_id, m): [] for h in hosts for m in METRICS}
    last_margin: dict[tuple[str, MetricKind], float] = {
        (h.spec.host_id, m): 0.0 for h in hosts for m in METRICS}

    ledgers: list[DayLedger] = []
    outcomes: list[StepOutcome] = []
    step_log: list[StepLogRow] = []

    for day in range(lo, hi):
        day_minutes = {h.spec.host_id: 0 for h in hosts}
        day_containers = {h.spec.host_id: [] for h in hosts}
        day_rewards = {h.spec.host_id: [] for h in hosts}
        day_violated = {h.spec.host_id: [] for h in hosts}
        day_margins: list[list[float]] = []
        # (state, action, next_state) per (host, metric) for deferred storage
        day_transitions = {(h.spec.host_id, m): [] for h in hosts for m in learned}

        for k in range(spd):
            t = day * spd + k
            step_margins: list[float] = []
            for host in hosts:
                hid = host.spec.host_id
                margins: dict[MetricKind, float] = {}
                states: dict[MetricKind, np.ndarray] = {}
                for m in METRICS:
                    strat = strategies[m]
                    err_win = _window(errors[(hid, m)], strat.window_size)
                    use_win = _window(usage_hist[(hid, m)], strat.window_size)
                    obs = Observation(hid, m, err_win, use_win, last_margin[(hid, m)])
                    margins[m] = strat.select(obs)
                    if m in learned:
                        states[m] = _state_vector(err_win)
                u_cpu = usage[(hid, MetricKind.CPU)][t]
                p_cpu = pred[(hid, MetricKind.CPU)][t]
                u_ram = usage[(hid, MetricKind.RAM)][t]
                p_ram = pred[(hid, MetricKind.RAM)][t]
                nb = containers_fitting(
                    cost, host.spec,
                    1.0 - p_cpu - margins[MetricKind.CPU],
                    1.0 - p_ram - margins[MetricKind.RAM])
                eff = {MetricKind.CPU: p_cpu + margins[MetricKind.CPU] - u_cpu,
                       MetricKind.RAM: p_ram + margins[MetricKind.RAM] - u_ram}
                violated = eff[MetricKind.CPU] < 0 or eff[MetricKind.RAM] < 0
                day_minutes[hid] = accumulate_violation(day_minutes[hid], violated, ts)
                day_containers[hid].append(nb)
                day_rewards[hid].append(nb * ppm * ts)
                day_violated[hid].append(violated)
                for m in METRICS:
                    u = usage[(hid, m)][t]
                    p = pred[(hid, m)][t]
                    errors[(hid, m)].append(float(u - p))
                    usage_hist[(hid, m)].append(float(u))
                    last_margin[(hid, m)] = margins[m]
                    step_margins.append(margins[m])
                if sim.mode == "train":
                    for m in learned:
                        next_state = _state_vector(
                            _window(errors[(hid, m)], strategies[m].window_size))
                        day_transitions[(hid, m)].append(
                            (states[m], margins[m], next_state))
                outcomes.append(StepOutcome(hid, t, margins, nb, violated, eff))
            day_margins.append(step_margins)

        penalties = {}
        for host in hosts:
            hid = host.spec.host_id
            settled = settle_day(cost, day_containers[hid], day_minutes[hid], ts)
            penalties[hid] = settled.penalty
            ledgers.append(DayLedger(hid, day, day_minutes[hid],
                                     settled.potential_saving, settled.penalty,
                                     settled.net_saving, day_containers[hid]))

        if sim.mode == "train":
            final_rewards = _attribute_rewards(
                sim.reward_attribution, day_rewards, day_violated, penalties)
            for k in range(spd):
                losses: list[float] = []
                rewards_k: list[float] = []
                for host in hosts:
                    hid = host.spec.host_id
                    rewards_k.append(final_rewards[hid][k])
                    for m in learned:
                        state, action, next_state = day_transitions[(hid, m)][k]
                        stats = strategies[m].pool.agent_for(hid).store_and_learn(
                            Transition(state, action, final_rewards[hid][k], next_state))
                        if stats.updated:
                            losses.append(stats.critic_loss)
                step_log.append(StepLogRow(
                    day * spd + k,
                    float(np.mean(losses)) if losses else math.nan,
                    float(np.mean(rewards_k)),
                    float(np.mean(day_margins[k]))))

    return RunResult(ledgers, outcomes, lo * spd, step_log)


def _attribute_rewards(attribution: str, day_rewards, day_violated, penalties):
    """Fold each host's settled penalty back into its per-step rewards.

    violation_spread divides the penalty equally over the steps that
    violated (their choices caused it); day_end_lump subtracts the whole
    penalty from the final step, leaving earlier rewards untouched.  Either
    way a day's rewards sum to its net saving.
    """
    final = {}
    for hid, rewards in day_rewards.items():
        rewards = list(rewards)
        penalty = penalties[hid]
        if penalty > 0:
            if attribution == "violation_spread":
                violated_idx = [k for k, v in enumerate(day_violated[hid]) if v]
                share = penalty / len(violated_idx)
                for k in violated_idx:
                    rewards[k] -= share
            else:
                rewards[-1] -= penalty
        final[hid] = rewards
    return final


@dataclass
class ComparisonRow:
    strategy: str
    potential: float
    penalty: float
    net: float
    net_ratio: float
    penalty_ratio: float


@dataclass
class ComparisonTable:
    baseline: str
    rows: list[ComparisonRow]
    reports: dict[str, "EvaluationReport"]  # noqa: F821  (built by reporting)


def compare_strategies(dc: Datacenter, cost: CostModel, sim: SimulationConfig,
                       specs, pools: dict[MetricKind, AgentPool] | None = None,
                       baseline: str | None = None) -> ComparisonTable:
    """Evaluate each strategy spec over the same range and report ratios.

    Every spec gets fresh strategy instances (seeded by name from the run
    seed, so repeated runs and sibling strategies are reproducible) bound to
    both metrics.  Ratios are taken against `baseline` (default: the first
    spec's label).
    """
    from marginsim.reporting import build_report

    if sim.mode != "evaluate":
        raise DomainError("compare_strategies only runs in evaluate mode")
    if not specs:
        raise DomainError("need at least one strategy spec")
    labels = [spec.label for spec in specs]
    if len(set(labels)) != len(labels):
        raise DomainError(f"duplicate strategy labels in {labels}")
    baseline = baseline or labels[0]
    if baseline not in labels:
        raise DomainError(f"baseline {baseline!r} is not among {labels}")

    reports = {}
    for spec in specs:
        strategies = {
            m: spec.build(m, sim.seed, pool=(pools or {}).get(m), explore=False)
            for m in METRICS
        }
        result = run(dc, cost, sim, strategies)
        reports[spec.label] = build_report(spec.label, dc, cost, sim, result)

    base = reports[baseline].totals
    rows = []
    for label in labels:
        totals = reports[label].totals
        rows.append(ComparisonRow(
            label, totals.potential, totals.penalty, totals.net,
            _ratio(totals.net, base.net), _ratio(totals.penalty, base.penalty)))
    return ComparisonTable(baseline, rows, reports)


def _ratio(value: float, base: float) -> float:
    if base == 0.0:
        return math.inf if value > 0 else 1.0
    return value / base
