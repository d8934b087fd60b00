"""Simulator tests against handcrafted traces and a straight-line oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginsim.agent import DdpgConfig, build_pool
from marginsim.costs import CostModel
from marginsim.engine import (
    SimulationConfig,
    compare_strategies,
    reward_scale_for,
    run,
    train_test_split,
    _attribute_rewards,
)
from marginsim.errors import DomainError
from marginsim.reporting import build_report, nearest_rank
from marginsim.strategies import (
    ErrorFeedbackMargin,
    FixedMargin,
    RandomMargin,
    StrategySpec,
)
from marginsim.traces import (
    Datacenter,
    HostSpec,
    HostTrace,
    MetricKind,
    TraceSample,
    generate_synthetic,
    SyntheticConfig,
)

CPU, RAM = MetricKind.CPU, MetricKind.RAM


def make_dc(host_series, step_minutes=96, cpu=32, ram=128.0):
    """Datacenter from {host_id: {metric: (usage, prediction)}} arrays."""
    hosts = []
    for hid in sorted(host_series):
        series = {}
        for m, (usage, pred) in host_series[hid].items():
            series[m] = [TraceSample(i, float(u), float(p))
                         for i, (u, p) in enumerate(zip(usage, pred))]
        hosts.append(HostTrace(HostSpec(hid, cpu, ram), series))
    return Datacenter("test", hosts, step_minutes)


def flat_dc(usage, prediction, days=1, hosts=1, step_minutes=96, **kw):
    steps = days * (1440 // step_minutes)
    series = {f"h{i:02d}": {m: ([usage] * steps, [prediction] * steps)
                            for m in (CPU, RAM)}
              for i in range(hosts)}
    return make_dc(series, step_minutes=step_minutes, **kw)


def fixed(margin):
    return {CPU: FixedMargin(margin), RAM: FixedMargin(margin)}


def sim_for(dc, days=None, **kw):
    days = dc.num_days() if days is None else days
    return SimulationConfig(seed=7, day_range=(0, days),
                            step_minutes=dc.step_minutes, **kw)


def brute_force_host_day(cost, spec, traces, margins, ts):
    """Independent one-day walk: explicit loops, its own discount table."""
    ppm = cost.price_per_hour / 60.0
    potential = 0.0
    minutes = 0
    u_cpu, p_cpu = traces[CPU]
    u_ram, p_ram = traces[RAM]
    for uc, pc, ur, pr in zip(u_cpu, p_cpu, u_ram, p_ram):
        counts = []
        for pred, margin, capacity, per in (
                (pc, margins[CPU], spec.cpu_cores, cost.container_cpu),
                (pr, margins[RAM], spec.ram_gb, cost.container_ram_gb)):
            headroom = min(max(1.0 - pred - margin, 0.0), 1.0)
            counts.append(math.floor(headroom * capacity / per))
        nb = min(counts)
        potential += nb * ppm * ts
        if uc > pc + margins[CPU] or ur > pr + margins[RAM]:
            minutes += ts
    if minutes <= 15:
        discount = 0.0
    elif minutes <= 120:
        discount = 0.10
    elif minutes <= 720:
        discount = 0.15
    else:
        discount = 0.30
    penalty = potential * discount
    return potential, penalty, potential - penalty, minutes


class TestTrainTestSplit:
    def test_eighty_twenty(self):
        dc = flat_dc(0.5, 0.5, days=10)
        assert train_test_split(dc, 0.8) == ((0, 8), (8, 10))

    def test_both_sides_nonempty_at_extremes(self):
        dc = flat_dc(0.5, 0.5, days=3)
        assert train_test_split(dc, 0.01) == ((0, 1), (1, 3))
        assert train_test_split(dc, 0.999) == ((0, 2), (2, 3))

    def test_needs_two_days(self):
        with pytest.raises(DomainError):
            train_test_split(flat_dc(0.5, 0.5, days=1), 0.8)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.5])
    def test_fraction_range(self, fraction):
        with pytest.raises(DomainError):
            train_test_split(flat_dc(0.5, 0.5, days=4), fraction)


class TestRewardScale:
    def test_single_host(self):
        dc = flat_dc(0.5, 0.5)
        cost = CostModel()
        # 32/2 cores and 128/8 GB both fit 16 containers on an empty host.
        assert reward_scale_for(dc, cost, 96) == pytest.approx(
            cost.price_per_minute * 96 * 16)

    def test_takes_roomiest_host(self):
        series = {
            "big": {m: ([0.5] * 15, [0.5] * 15) for m in (CPU, RAM)},
            "small": {m: ([0.5] * 15, [0.5] * 15) for m in (CPU, RAM)},
        }
        hosts = [
            HostTrace(HostSpec("big", 64, 256.0), series["big"]),
            HostTrace(HostSpec("small", 4, 16.0), series["small"]),
        ]
        dc = Datacenter("mixed", hosts, 96)
        cost = CostModel()
        assert reward_scale_for(dc, cost, 96) == pytest.approx(
            cost.price_per_minute * 96 * 32)


class TestRunBasics:
    def test_perfect_predictions_no_violations(self):
        dc = flat_dc(0.4, 0.4, days=2)
        result = run(dc, CostModel(), sim_for(dc), fixed(0.0))
        assert all(l.violation_minutes == 0 for l in result.ledgers)
        assert all(l.penalty == 0.0 for l in result.ledgers)
        assert not any(o.violated for o in result.outcomes)

    def test_total_underprediction_worst_tier(self):
        dc = flat_dc(1.0, 0.0, days=1)
        cost = CostModel()
        result = run(dc, cost, sim_for(dc), fixed(0.0))
        ledger = result.ledgers[0]
        assert ledger.violation_minutes == 1440
        # Empty-looking host fits 16 containers all day at margin zero.
        expected_potential = 16 * cost.price_per_minute * 1440
        assert ledger.potential_saving == pytest.approx(expected_potential)
        assert ledger.penalty == pytest.approx(0.30 * expected_potential)
        assert ledger.net_saving == pytest.approx(0.70 * expected_potential)

    def test_margin_blocks_violation(self):
        # usage exceeds prediction by 0.1; a 0.15 margin absorbs it.
        dc = flat_dc(0.6, 0.5, days=1)
        result = run(dc, CostModel(), sim_for(dc), fixed(0.15))
        assert result.ledgers[0].violation_minutes == 0
        tight = run(dc, CostModel(), sim_for(dc), fixed(0.05))
        assert tight.ledgers[0].violation_minutes == 1440

    def test_day_range_slices(self):
        dc = flat_dc(0.5, 0.5, days=3)
        sim = SimulationConfig(seed=1, day_range=(1, 2), step_minutes=96)
        result = run(dc, CostModel(), sim, fixed(0.0))
        assert result.start_step == 15
        assert [l.day_index for l in result.ledgers] == [1]
        assert {o.step_index for o in result.outcomes} == set(range(15, 30))

    def test_day_range_beyond_trace(self):
        dc = flat_dc(0.5, 0.5, days=2)
        sim = SimulationConfig(seed=1, day_range=(0, 3), step_minutes=96)
        with pytest.raises(DomainError):
            run(dc, CostModel(), sim, fixed(0.0))

    def test_step_mismatch_rejected(self):
        dc = flat_dc(0.5, 0.5)
        sim = SimulationConfig(seed=1, day_range=(0, 1), step_minutes=3)
        with pytest.raises(DomainError):
            run(dc, CostModel(), sim, fixed(0.0))

    def test_missing_metric_strategy(self):
        dc = flat_dc(0.5, 0.5)
        with pytest.raises(DomainError):
            run(dc, CostModel(), sim_for(dc), {CPU: FixedMargin(0.1)})

    def test_train_mode_needs_learned_strategy(self):
        dc = flat_dc(0.5, 0.5, days=2)
        sim = sim_for(dc, mode="train")
        with pytest.raises(DomainError):
            run(dc, CostModel(), sim, fixed(0.1))


class TestBruteForceOracle:
    def test_three_hosts_exact(self):
        rng = np.random.default_rng(42)
        steps = 30  # two days at 96-minute steps
        series = {}
        for hid in ("a", "b", "c"):
            series[hid] = {}
            for m in (CPU, RAM):
                pred = rng.uniform(0.2, 0.8, size=steps)
                usage = np.clip(pred + rng.normal(0, 0.15, size=steps), 0, 1)
                series[hid][m] = (usage, pred)
        dc = make_dc(series, step_minutes=96)
        cost = CostModel()
        margins = {CPU: 0.10, RAM: 0.05}
        result = run(dc, cost, sim_for(dc),
                     {CPU: FixedMargin(0.10), RAM: FixedMargin(0.05)})
        assert len(result.ledgers) == 6
        for ledger in result.ledgers:
            traces = {m: tuple(arr[ledger.day_index * 15:(ledger.day_index + 1) * 15]
                               for arr in series[ledger.host_id][m])
                      for m in (CPU, RAM)}
            expect = brute_force_host_day(
                cost, dc.host(ledger.host_id).spec, traces, margins, 96)
            assert ledger.potential_saving == expect[0]
            assert ledger.penalty == expect[1]
            assert ledger.net_saving == expect[2]
            assert ledger.violation_minutes == expect[3]

    def test_deterministic_repeat(self):
        cfg = SyntheticConfig(seed=5, num_hosts=2, num_days=2,
                              spike_prob_per_step=0.004)
        dc = generate_synthetic(cfg)
        strategies = lambda: {CPU: RandomMargin(11), RAM: ErrorFeedbackMargin()}
        sim = SimulationConfig(seed=3, day_range=(0, 2), step_minutes=3)
        a = run(dc, CostModel(), sim, strategies())
        b = run(dc, CostModel(), sim, strategies())
        assert a.ledgers == b.ledgers
        assert a.outcomes == b.outcomes


class TestCausality:
    def test_margins_ignore_future_usage(self):
        rng = np.random.default_rng(9)
        steps = 15
        pred = rng.uniform(0.3, 0.6, size=steps)
        usage = np.clip(pred + rng.normal(0, 0.1, size=steps), 0, 1)
        bumped = usage.copy()
        t_star = 7
        bumped[t_star] = min(1.0, usage[t_star] + 0.3)

        def margins_for(u):
            series = {"h": {CPU: (u, pred), RAM: (u, pred)}}
            dc = make_dc(series)
            strategies = {CPU: ErrorFeedbackMargin(), RAM: ErrorFeedbackMargin()}
            result = run(dc, CostModel(), sim_for(dc), strategies)
            return [o.margins[CPU] for o in result.outcomes]

        base = margins_for(usage)
        perturbed = margins_for(bumped)
        assert base[:t_star + 1] == perturbed[:t_star + 1]
        assert base[t_star + 1] != perturbed[t_star + 1]


class TestConservation:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_ledger_invariants(self, seed):
        rng = np.random.default_rng(seed)
        steps = 15
        pred = rng.uniform(0.0, 0.9, size=steps)
        usage = np.clip(pred + rng.normal(0, 0.2, size=steps), 0, 1)
        dc = make_dc({"h": {CPU: (usage, pred), RAM: (usage, pred)}})
        cost = CostModel()
        margin = float(rng.uniform(0, 0.3))
        result = run(dc, cost, sim_for(dc), fixed(margin))
        ledger = result.ledgers[0]
        assert ledger.violation_minutes % 96 == 0
        assert 0 <= ledger.violation_minutes <= 1440
        assert ledger.penalty <= 0.30 * ledger.potential_saving + 1e-12
        assert ledger.net_saving == ledger.potential_saving - ledger.penalty
        from marginsim.costs import discount_for
        assert ledger.penalty == ledger.potential_saving * discount_for(
            cost, ledger.violation_minutes)

    def test_higher_margin_never_violates_more(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            steps = 15
            pred = rng.uniform(0.1, 0.7, size=steps)
            usage = np.clip(pred + rng.normal(0, 0.15, size=steps), 0, 1)
            dc = make_dc({"h": {CPU: (usage, pred), RAM: (usage, pred)}})
            lo, hi = sorted(rng.uniform(0, 0.4, size=2))
            small = run(dc, CostModel(), sim_for(dc), fixed(float(lo)))
            big = run(dc, CostModel(), sim_for(dc), fixed(float(hi)))
            assert (big.ledgers[0].violation_minutes
                    <= small.ledgers[0].violation_minutes)
            assert (big.ledgers[0].potential_saving
                    <= small.ledgers[0].potential_saving)


class TestRewardAttribution:
    def test_violation_spread_splits_penalty(self):
        rewards = {"h": [1.0, 1.0, 1.0, 1.0]}
        violated = {"h": [False, True, False, True]}
        out = _attribute_rewards("violation_spread", rewards, violated, {"h": 0.8})
        assert out["h"] == [1.0, 0.6, 1.0, 0.6]

    def test_day_end_lump_hits_last_step(self):
        rewards = {"h": [1.0, 1.0, 1.0]}
        violated = {"h": [True, False, False]}
        out = _attribute_rewards("day_end_lump", rewards, violated, {"h": 0.9})
        assert out["h"] == [1.0, 1.0, pytest.approx(0.1)]

    def test_zero_penalty_untouched(self):
        rewards = {"h": [0.5, 0.5]}
        out = _attribute_rewards("violation_spread", rewards,
                                 {"h": [False, False]}, {"h": 0.0})
        assert out["h"] == [0.5, 0.5]

    @given(seed=st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_rewards_sum_to_net(self, seed):
        rng = np.random.default_rng(seed)
        n = 10
        rewards = {"h": list(rng.uniform(0, 1, size=n))}
        violated = {"h": list(rng.uniform(size=n) < 0.4)}
        if not any(violated["h"]):
            violated["h"][0] = True
        penalty = float(rng.uniform(0, 2))
        total = sum(rewards["h"])
        for mode in ("violation_spread", "day_end_lump"):
            out = _attribute_rewards(mode, rewards, violated, {"h": penalty})
            assert sum(out["h"]) == pytest.approx(total - penalty, rel=1e-12)


class TestTrainMode:
    def build(self, days=2):
        cfg = SyntheticConfig(seed=21, num_hosts=2, num_days=days,
                              prediction_noise_sigma=0.05)
        dc = generate_synthetic(cfg)
        ddpg = DdpgConfig(window=4, batch_size=8, warmup_steps=8,
                          replay_capacity=512, steps_per_day=480)
        pool = build_pool(ddpg, CPU, [h.spec.host_id for h in dc.hosts], 99, 0.01)
        spec = StrategySpec.parse("releaser")
        strategies = {
            CPU: spec.build(CPU, 99, pool=pool, explore=True),
            RAM: FixedMargin(0.1),
        }
        return dc, pool, strategies

    def test_step_log_covers_training_steps(self):
        dc, pool, strategies = self.build()
        sim = SimulationConfig(seed=5, day_range=(0, 2), step_minutes=3, mode="train")
        result = run(dc, CostModel(), sim, strategies)
        assert len(result.step_log) == 2 * 480
        assert [row.step_index for row in result.step_log] == list(range(960))
        # Margins averaged over hosts and metrics stay within the legal range.
        assert all(0.0 <= row.mean_margin <= 0.99 for row in result.step_log)
        agent = pool.agent_for(dc.hosts[0].spec.host_id)
        assert agent.store_calls == 2 * 480 * len(dc.hosts)
        assert agent.replay.size == min(agent.store_calls, agent.replay.capacity)

    def test_explore_flag_must_match_mode(self):
        dc, pool, strategies = self.build()
        sim = sim_for(dc, mode="evaluate")
        sim = SimulationConfig(seed=5, day_range=(0, 2), step_minutes=3)
        with pytest.raises(DomainError):
            run(dc, CostModel(), sim, strategies)

    def test_evaluate_has_empty_step_log(self):
        dc = flat_dc(0.5, 0.5)
        result = run(dc, CostModel(), sim_for(dc), fixed(0.1))
        assert result.step_log == []


class TestCompare:
    def setup_dc(self):
        cfg = SyntheticConfig(seed=31, num_hosts=2, num_days=2,
                              prediction_noise_sigma=0.05)
        return generate_synthetic(cfg)

    def test_baseline_ratio_is_exactly_one(self):
        dc = self.setup_dc()
        sim = SimulationConfig(seed=2, day_range=(0, 2), step_minutes=3)
        table = compare_strategies(dc, CostModel(), sim,
                                   [StrategySpec.parse("fixed:0.05"),
                                    StrategySpec.parse("fixed:0.15")])
        assert table.baseline == "fixed:0.05"
        assert table.rows[0].net_ratio == 1.0
        assert table.rows[0].penalty_ratio == 1.0

    def test_wide_margin_cuts_penalty_and_potential(self):
        dc = self.setup_dc()
        sim = SimulationConfig(seed=2, day_range=(0, 2), step_minutes=3)
        table = compare_strategies(dc, CostModel(), sim,
                                   [StrategySpec.parse("fixed:0"),
                                    StrategySpec.parse("fixed:0.99")])
        narrow, wide = table.rows
        assert wide.penalty <= narrow.penalty
        assert wide.potential < narrow.potential
        assert wide.net < narrow.net  # nothing fits at a 0.99 margin

    def test_duplicate_labels_rejected(self):
        dc = self.setup_dc()
        sim = SimulationConfig(seed=2, day_range=(0, 2), step_minutes=3)
        with pytest.raises(DomainError):
            compare_strategies(dc, CostModel(), sim,
                               [StrategySpec.parse("fixed:0.05"),
                                StrategySpec.parse("fixed:0.05")])

    def test_reports_cover_each_strategy(self):
        dc = self.setup_dc()
        sim = SimulationConfig(seed=2, day_range=(1, 2), step_minutes=3)
        table = compare_strategies(dc, CostModel(), sim,
                                   [StrategySpec.parse("fixed:0.1"),
                                    StrategySpec.parse("scavenger")])
        assert set(table.reports) == {"fixed:0.1", "scavenger"}
        for label, report in table.reports.items():
            assert report.strategy == label
            assert report.day_range == (1, 2)


class TestReportIntegrity:
    def build_report(self):
        cfg = SyntheticConfig(seed=41, num_hosts=3, num_days=2,
                              prediction_noise_sigma=0.05)
        dc = generate_synthetic(cfg)
        cost = CostModel()
        sim = SimulationConfig(seed=6, day_range=(0, 2), step_minutes=3)
        result = run(dc, cost, sim, fixed(0.08))
        return dc, build_report("fixed:0.08", dc, cost, sim, result), result

    def test_totals_are_exact_sums(self):
        dc, report, result = self.build_report()
        for hid, totals in report.host_totals.items():
            rows = [l for l in result.ledgers if l.host_id == hid]
            assert totals.potential == sum(l.potential_saving for l in rows)
            assert totals.penalty == sum(l.penalty for l in rows)
            assert totals.net == sum(l.net_saving for l in rows)
        assert report.totals.net == sum(
            report.host_totals[h.spec.host_id].net for h in dc.hosts)

    def test_margin_series_complete(self):
        dc, report, result = self.build_report()
        for (hid, metric), points in report.margin_series.items():
            assert [s for s, _ in points] == list(range(960))
            assert all(v == 0.08 for _, v in points)

    def test_percentiles_recompute(self):
        dc, report, _ = self.build_report()
        for summary in report.margin_summaries:
            points = report.margin_series[(summary.host_id, summary.metric)]
            values = sorted(v for _, v in points)
            n = len(values)
            assert summary.minimum == values[0]
            assert summary.median == values[max(1, math.ceil(0.5 * n)) - 1]
            assert summary.p75 == values[max(1, math.ceil(0.75 * n)) - 1]

    def test_error_cdf_probabilities(self):
        dc, report, _ = self.build_report()
        for metric_block in report.error_cdfs.values():
            for points in metric_block.values():
                probs = [p for _, p in points]
                assert probs == sorted(probs)
                if probs:
                    assert probs[-1] == pytest.approx(1.0)


class TestNearestRank:
    def test_worked_examples(self):
        values = [1.0, 2.0, 3.0, 4.0]
        assert nearest_rank(values, 50) == 2.0
        assert nearest_rank(values, 75) == 3.0
        assert nearest_rank(values, 100) == 4.0
        assert nearest_rank(values, 1) == 1.0

    def test_single_value(self):
        assert nearest_rank([5.0], 50) == 5.0

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40),
           st.floats(0.1, 100))
    @settings(max_examples=60, deadline=None)
    def test_result_is_member(self, values, pct):
        values = sorted(values)
        assert nearest_rank(values, pct) in values
