"""Host traces: usage/prediction series, CSV I/O, and a synthetic generator.

All usage and prediction values are fractions of a host's capacity in
[0, 1].  Series are sampled on a fixed grid of `step_minutes` (3 by
default, so 480 steps per day) and always cover a whole number of days.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from marginsim.errors import ConfigError, DomainError, TraceParseError, TraceSchemaError

MINUTES_PER_DAY = 1440


class MetricKind(Enum):
    CPU = "cpu"
    RAM = "ram"


@dataclass(frozen=True)
class TraceSample:
    """One step of one metric on one host."""

    step_index: int
    usage: float
    prediction: float

    def validate(self) -> None:
        if self.step_index < 0:
            raise DomainError(f"step_index must be >= 0, got {self.step_index}")
        if not (0.0 <= self.usage <= 1.0):
            raise DomainError(f"usage must be in [0, 1], got {self.usage}")
        if not (0.0 <= self.prediction <= 1.0):
            raise DomainError(f"prediction must be in [0, 1], got {self.prediction}")


@dataclass(frozen=True)
class HostSpec:
    """Physical capacity of one host."""

    host_id: str
    cpu_cores: int
    ram_gb: float

    def validate(self) -> None:
        if not self.host_id:
            raise DomainError("host_id must be non-empty")
        if self.cpu_cores <= 0:
            raise DomainError(f"{self.host_id}: cpu_cores must be positive, got {self.cpu_cores}")
        if self.ram_gb <= 0:
            raise DomainError(f"{self.host_id}: ram_gb must be positive, got {self.ram_gb}")


@dataclass
class HostTrace:
    """A host's capacity plus one series per metric, equal lengths."""

    spec: HostSpec
    series: dict[MetricKind, list[TraceSample]]

    def num_steps(self) -> int:
        return len(next(iter(self.series.values())))

    def validate(self, steps_per_day: int) -> None:
        self.spec.validate()
        if set(self.series) != {MetricKind.CPU, MetricKind.RAM}:
            raise TraceSchemaError(f"{self.spec.host_id}: need exactly one series per metric")
        lengths = {metric: len(samples) for metric, samples in self.series.items()}
        if len(set(lengths.values())) != 1:
            raise TraceSchemaError(f"{self.spec.host_id}: ragged series lengths {lengths}")
        n = self.num_steps()
        if n == 0 or n % steps_per_day != 0:
            raise TraceSchemaError(
                f"{self.spec.host_id}: series length {n} is not a positive whole number "
                f"of days ({steps_per_day} steps per day)"
            )
        for metric, samples in self.series.items():
            for i, sample in enumerate(samples):
                sample.validate()
                if sample.step_index != i:
                    raise TraceSchemaError(
                        f"{self.spec.host_id}/{metric.value}: step {sample.step_index} "
                        f"at position {i}; steps must be contiguous from 0"
                    )


@dataclass
class Datacenter:
    """A named collection of host traces sharing one step grid."""

    name: str
    hosts: list[HostTrace]
    step_minutes: int = 3

    @property
    def steps_per_day(self) -> int:
        return MINUTES_PER_DAY // self.step_minutes

    def num_steps(self) -> int:
        return self.hosts[0].num_steps() if self.hosts else 0

    def num_days(self) -> int:
        return self.num_steps() // self.steps_per_day

    def host(self, host_id: str) -> HostTrace:
        for h in self.hosts:
            if h.spec.host_id == host_id:
                return h
        raise KeyError(host_id)

    def validate(self) -> None:
        if MINUTES_PER_DAY % self.step_minutes != 0:
            raise DomainError(f"step_minutes {self.step_minutes} must divide {MINUTES_PER_DAY}")
        if not self.hosts:
            raise TraceSchemaError(f"{self.name}: datacenter has no hosts")
        ids = [h.spec.host_id for h in self.hosts]
        if len(set(ids)) != len(ids):
            raise TraceSchemaError(f"{self.name}: duplicate host ids")
        for h in self.hosts:
            h.validate(self.steps_per_day)
        if len({h.num_steps() for h in self.hosts}) != 1:
            raise TraceSchemaError(f"{self.name}: hosts disagree on series length")


@dataclass
class SyntheticConfig:
    """Recipe for a synthetic datacenter trace.

    Usage is a clipped sum of a daily sinusoid, AR(1) noise, and occasional
    one-step spikes.  The prediction is a trailing moving average of usage
    (strictly past samples only) plus a bias and Gaussian noise, clipped to
    [0, 1] like the usage itself.
    """

    seed: int
    num_hosts: int
    num_days: int
    base_load: float = 0.35
    daily_amplitude: float = 0.15
    noise_ar_coeff: float = 0.8
    noise_sigma: float = 0.02
    spike_prob_per_step: float = 0.0
    spike_magnitude: float = 0.25
    prediction_bias: float = 0.0
    prediction_noise_sigma: float = 0.05
    step_minutes: int = 3
    smoothing_window: int = 10
    host_cpu_cores: int = 32
    host_ram_gb: float = 128.0

    def validate(self) -> None:
        if self.num_hosts <= 0 or self.num_days <= 0:
            raise DomainError("num_hosts and num_days must be positive")
        if not (0.0 <= self.base_load <= 1.0):
            raise DomainError(f"base_load must be in [0, 1], got {self.base_load}")
        if self.daily_amplitude < 0:
            raise DomainError("daily_amplitude must be >= 0")
        if not (0.0 <= self.noise_ar_coeff < 1.0):
            raise DomainError(f"noise_ar_coeff must be in [0, 1), got {self.noise_ar_coeff}")
        for name in ("noise_sigma", "spike_prob_per_step", "spike_magnitude",
                     "prediction_noise_sigma"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.spike_prob_per_step > 1.0:
            raise DomainError("spike_prob_per_step must be <= 1")
        if MINUTES_PER_DAY % self.step_minutes != 0:
            raise DomainError(f"step_minutes {self.step_minutes} must divide {MINUTES_PER_DAY}")
        if self.smoothing_window < 1:
            raise DomainError("smoothing_window must be >= 1")
        HostSpec("h", self.host_cpu_cores, self.host_ram_gb).validate()


def generate_synthetic(config: SyntheticConfig) -> Datacenter:
    """Build a deterministic synthetic Datacenter from `config`.

    Each (host, metric) pair draws from its own RNG stream keyed on
    (seed, host index, metric index), and each host has a phase offset drawn
    from a host-level stream, so traces are bit-identical for identical
    configs no matter how many hosts or days are requested.
    """
    config.validate()
    steps_per_day = MINUTES_PER_DAY // config.step_minutes
    total = config.num_days * steps_per_day
    grid = np.arange(total)
    hosts = []
    for host_idx in range(config.num_hosts):
        host_rng = np.random.default_rng(np.random.SeedSequence([config.seed, host_idx]))
        phase = host_rng.uniform(0.0, 2.0 * math.pi)
        spec = HostSpec(f"host-{host_idx}", config.host_cpu_cores, config.host_ram_gb)
        series: dict[MetricKind, list[TraceSample]] = {}
        for metric_idx, metric in enumerate((MetricKind.CPU, MetricKind.RAM)):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, host_idx, metric_idx]))
            usage = _usage_series(config, steps_per_day, grid, phase, rng)
            prediction = _prediction_series(config, usage, rng)
            series[metric] = [
                TraceSample(int(t), float(usage[t]), float(prediction[t])) for t in grid
            ]
        hosts.append(HostTrace(spec, series))
    dc = Datacenter("synthetic", hosts, config.step_minutes)
    dc.validate()
    return dc


def _usage_series(config, steps_per_day, grid, phase, rng):
    sinusoid = config.base_load + config.daily_amplitude * np.sin(
        2.0 * math.pi * grid / steps_per_day + phase)
    innovations = rng.normal(0.0, config.noise_sigma, grid.size)
    ar = np.empty(grid.size)
    prev = 0.0
    for t in range(grid.size):
        prev = config.noise_ar_coeff * prev + innovations[t]
        ar[t] = prev
    spikes = (rng.random(grid.size) < config.spike_prob_per_step) * config.spike_magnitude
    return np.clip(sinusoid + ar + spikes, 0.0, 1.0)


def _prediction_series(config, usage, rng):
    # Trailing mean over the last `smoothing_window` samples strictly before
    # t, so predictions never peek at the step they predict.  The first step
    # has no history and falls back to the configured base load.
    w = config.smoothing_window
    sums = np.concatenate([[0.0], np.cumsum(usage)])
    smoothed = np.empty(usage.size)
    smoothed[0] = config.base_load
    for t in range(1, usage.size):
        lo = max(0, t - w)
        smoothed[t] = (sums[t] - sums[lo]) / (t - lo)
    noise = rng.normal(0.0, config.prediction_noise_sigma, usage.size)
    return np.clip(smoothed + config.prediction_bias + noise, 0.0, 1.0)


TRACE_HEADER = ["host_id", "metric", "step", "usage", "prediction"]
CAPACITY_HEADER = ["host_id", "cpu_cores", "ram_gb"]


def write_traces(dc: Datacenter, path: str | Path) -> None:
    """Write the datacenter's series as CSV rows sorted by host, metric, step."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for host in sorted(dc.hosts, key=lambda h: h.spec.host_id):
            for metric in (MetricKind.CPU, MetricKind.RAM):
                for s in host.series[metric]:
                    writer.writerow([host.spec.host_id, metric.value, s.step_index,
                                     repr(s.usage), repr(s.prediction)])


def write_capacities(specs: list[HostSpec], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CAPACITY_HEADER)
        for spec in sorted(specs, key=lambda s: s.host_id):
            writer.writerow([spec.host_id, spec.cpu_cores, repr(spec.ram_gb)])


def load_capacities(path: str | Path) -> dict[str, HostSpec]:
    """Read a host capacity table (CSV with a host_id,cpu_cores,ram_gb header).

    Lines starting with '#' are comments.
    """
    path = Path(path)
    specs: dict[str, HostSpec] = {}
    with path.open(newline="") as fh:
        rows = [(no, line) for no, line in enumerate(fh, start=1)
                if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise TraceParseError(path, 1, "empty capacity file")
    header_no, header_line = rows[0]
    header = next(csv.reader([header_line]))
    if header != CAPACITY_HEADER:
        raise TraceParseError(path, header_no, f"expected header {CAPACITY_HEADER}, got {header}")
    for no, line in rows[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != 3:
            raise TraceParseError(path, no, f"expected 3 fields, got {len(fields)}")
        host_id, cores_text, ram_text = fields
        try:
            spec = HostSpec(host_id, int(cores_text), float(ram_text))
            spec.validate()
        except (ValueError, DomainError) as exc:
            raise TraceParseError(path, no, str(exc)) from exc
        if host_id in specs:
            raise TraceParseError(path, no, f"duplicate host {host_id}")
        specs[host_id] = spec
    return specs


def load_traces(path: str | Path, capacities: dict[str, HostSpec],
                step_minutes: int = 3, name: str | None = None) -> Datacenter:
    """Parse a trace CSV into a validated Datacenter.

    Every host in the file must have a HostSpec in `capacities`; extra
    capacity entries are ignored.  Rows may arrive in any order.
    """
    path = Path(path)
    per_host: dict[str, dict[MetricKind, dict[int, TraceSample]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError(path, 1, "empty trace file") from None
        if header != TRACE_HEADER:
            raise TraceParseError(path, 1, f"expected header {TRACE_HEADER}, got {header}")
        for no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise TraceParseError(path, no, f"expected 5 fields, got {len(row)}")
            host_id, metric_text, step_text, usage_text, pred_text = row
            try:
                metric = MetricKind(metric_text)
            except ValueError:
                raise TraceParseError(path, no, f"unknown metric {metric_text!r}") from None
            try:
                sample = TraceSample(int(step_text), float(usage_text), float(pred_text))
                sample.validate()
            except (ValueError, DomainError) as exc:
                raise TraceParseError(path, no, str(exc)) from exc
            if host_id not in capacities:
                raise ConfigError(f"{path}:{no}: host {host_id!r} has no capacity entry")
            steps = per_host.setdefault(host_id, {}).setdefault(metric, {})
            if sample.step_index in steps:
                raise TraceSchemaError(
                    f"{path}:{no}: duplicate sample {host_id}/{metric.value}/{sample.step_index}")
            steps[sample.step_index] = sample

    if not per_host:
        raise TraceSchemaError(f"{path}: no data rows")
    hosts = []
    for host_id in sorted(per_host):
        series = {}
        for metric, by_step in per_host[host_id].items():
            ordered = [by_step[i] for i in sorted(by_step)]
            series[metric] = ordered
        hosts.append(HostTrace(capacities[host_id], series))
    dc = Datacenter(name or path.stem, hosts, step_minutes)
    dc.validate()
    return dc


def error_cdf(dc: Datacenter, metric: MetricKind,
              start_step: int = 0, end_step: int | None = None,
              ) -> dict[str, list[tuple[float, float]]]:
    """Empirical CDF of positive prediction errors (usage - prediction > 0).

    Returns, per host, the sorted unique error values paired with the
    cumulative fraction of positive errors at or below each value.  Hosts
    with no underestimation in the range map to an empty list.
    """
    out: dict[str, list[tuple[float, float]]] = {}
    for host in dc.hosts:
        samples = host.series[metric][start_step:end_step]
        errors = sorted(s.usage - s.prediction for s in samples if s.usage > s.prediction)
        points: list[tuple[float, float]] = []
        total = len(errors)
        for i, e in enumerate(errors, start=1):
            if points and points[-1][0] == e:
                points[-1] = (e, i / total)
            else:
                points.append((e, i / total))
        out[host.spec.host_id] = points
    return out
