"""Scenario configs: one INI-style file describes a whole experiment.

A scenario names its trace source (synthetic recipe or CSV files), cost
model overrides, strategy bindings, agent hyperparameters, the output
directory, and the single global seed every random stream derives from.
Unknown sections or keys are hard errors so typos cannot silently fall back
to defaults.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from marginsim.agent import DdpgConfig
from marginsim.costs import DEFAULT_DISCOUNT_TIERS, CostModel
from marginsim.engine import REWARD_ATTRIBUTIONS
from marginsim.errors import ConfigError, DomainError
from marginsim.seeds import subseed
from marginsim.strategies import StrategySpec
from marginsim.traces import (
    Datacenter,
    MetricKind,
    SyntheticConfig,
    generate_synthetic,
    load_capacities,
    load_traces,
)

_SCHEMA = {
    "scenario": {"name", "seed", "output_dir"},
    "trace": {"source", "step_minutes", "trace_file", "capacity_file"},
    "synthetic": {"num_hosts", "num_days", "base_load", "daily_amplitude",
                  "noise_ar_coeff", "noise_sigma", "spike_prob_per_step",
                  "spike_magnitude", "prediction_bias", "prediction_noise_sigma",
                  "smoothing_window", "cpu_cores", "ram_gb"},
    "cost": {"price_per_hour", "container_cpu", "container_ram_gb", "discount_tiers"},
    "strategies": {"cpu", "ram", "compare", "baseline"},
    "ddpg": {"window", "learning_rate", "discount", "replay_capacity", "batch_size",
             "warmup_steps", "ou_theta", "ou_mu", "ou_sigma", "target_update_days",
             "critic_loss", "train_fraction", "per_host_agents", "reward_attribution"},
}


@dataclass
class ScenarioConfig:
    """Validated contents of one scenario file."""

    path: Path
    name: str
    seed: int
    output_dir: Path
    trace_source: str
    step_minutes: int
    trace_file: Path | None
    capacity_file: Path | None
    synthetic: SyntheticConfig | None
    cost: CostModel
    bindings: dict[MetricKind, StrategySpec]
    compare: list[StrategySpec]
    baseline: str | None
    ddpg: DdpgConfig
    reward_attribution: str = "violation_spread"

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_dir / "checkpoints"

    def learned_metrics(self) -> list[MetricKind]:
        return [m for m, spec in self.bindings.items() if spec.kind == "releaser"]

    def build_datacenter(self) -> Datacenter:
        """Materialize the trace this scenario describes."""
        if self.trace_source == "synthetic":
            dc = generate_synthetic(self.synthetic)
            dc.name = self.name
            return dc
        capacities = load_capacities(self.capacity_file)
        return load_traces(self.trace_file, capacities, self.step_minutes, name=self.name)


def load_scenario(path: str | Path, output_override: str | Path | None = None,
                  ) -> ScenarioConfig:
    """Parse and validate a scenario file; every error names its field."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open() as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    view = _View(parser, path)
    name = view.text("scenario", "name", default=path.stem)
    seed = view.integer("scenario", "seed", required=True)
    output_dir = Path(output_override) if output_override is not None else Path(
        view.text("scenario", "output_dir", default=f"out/{name}"))

    source = view.text("trace", "source", default="synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError(f"{path}: trace.source must be 'synthetic' or 'csv', got {source!r}")
    step_minutes = view.integer("trace", "step_minutes", default=3)
    if step_minutes <= 0 or 1440 % step_minutes != 0:
        raise ConfigError(f"{path}: trace.step_minutes must divide 1440, got {step_minutes}")

    trace_file = capacity_file = None
    synthetic = None
    if source == "csv":
        if parser.has_section("synthetic"):
            raise ConfigError(f"{path}: [synthetic] section conflicts with trace.source = csv")
        trace_file = _resolve(path, view.text("trace", "trace_file", required=True))
        capacity_file = _resolve(path, view.text("trace", "capacity_file", required=True))
        for p, key in ((trace_file, "trace_file"), (capacity_file, "capacity_file")):
            if not p.is_file():
                raise ConfigError(f"{path}: trace.{key} does not exist: {p}")
    else:
        for key in ("trace_file", "capacity_file"):
            if parser.has_option("trace", key):
                raise ConfigError(
                    f"{path}: trace.{key} only applies when trace.source = csv")
        synthetic = SyntheticConfig(
            seed=subseed(seed, "trace"),
            num_hosts=view.integer("synthetic", "num_hosts", required=True),
            num_days=view.integer("synthetic", "num_days", required=True),
            base_load=view.number("synthetic", "base_load", default=0.35),
            daily_amplitude=view.number("synthetic", "daily_amplitude", default=0.15),
            noise_ar_coeff=view.number("synthetic", "noise_ar_coeff", default=0.8),
            noise_sigma=view.number("synthetic", "noise_sigma", default=0.02),
            spike_prob_per_step=view.number("synthetic", "spike_prob_per_step", default=0.0),
            spike_magnitude=view.number("synthetic", "spike_magnitude", default=0.25),
            prediction_bias=view.number("synthetic", "prediction_bias", default=0.0),
            prediction_noise_sigma=view.number(
                "synthetic", "prediction_noise_sigma", default=0.05),
            step_minutes=step_minutes,
            smoothing_window=view.integer("synthetic", "smoothing_window", default=10),
            host_cpu_cores=view.integer("synthetic", "cpu_cores", default=32),
            host_ram_gb=view.number("synthetic", "ram_gb", default=128.0),
        )
        try:
            synthetic.validate()
        except DomainError as exc:
            raise ConfigError(f"{path}: [synthetic]: {exc}") from exc

    cost = CostModel(
        container_cpu=view.number("cost", "container_cpu", default=2.0),
        container_ram_gb=view.number("cost", "container_ram_gb", default=8.0),
        price_per_hour=view.number("cost", "price_per_hour", default=0.0317),
        discount_tiers=_parse_tiers(view.text("cost", "discount_tiers", default=None), path),
    )
    try:
        cost.validate()
    except DomainError as exc:
        raise ConfigError(f"{path}: [cost]: {exc}") from exc

    bindings = {}
    for metric in (MetricKind.CPU, MetricKind.RAM):
        token = view.text("strategies", metric.value, default="releaser")
        bindings[metric] = _parse_spec(token, path, f"strategies.{metric.value}")
    compare_text = view.text("strategies", "compare", default=None)
    if compare_text is None:
        compare = []
        for spec in bindings.values():
            if spec.label not in [s.label for s in compare]:
                compare.append(spec)
    else:
        compare = [_parse_spec(tok, path, "strategies.compare")
                   for tok in compare_text.split(",") if tok.strip()]
        if not compare:
            raise ConfigError(f"{path}: strategies.compare is empty")
        labels = [s.label for s in compare]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"{path}: duplicate entries in strategies.compare: {labels}")
    baseline = view.text("strategies", "baseline", default=None)
    if baseline is not None and baseline not in [s.label for s in compare]:
        raise ConfigError(
            f"{path}: strategies.baseline {baseline!r} is not in the compare list")

    reward_attribution = view.text("ddpg", "reward_attribution",
                                   default="violation_spread")
    if reward_attribution not in REWARD_ATTRIBUTIONS:
        raise ConfigError(
            f"{path}: ddpg.reward_attribution must be one of {REWARD_ATTRIBUTIONS}")
    ddpg = DdpgConfig(
        window=view.integer("ddpg", "window", default=10),
        learning_rate=view.number("ddpg", "learning_rate", default=0.001),
        discount=view.number("ddpg", "discount", default=0.99),
        replay_capacity=view.integer("ddpg", "replay_capacity", default=100_000),
        batch_size=view.integer("ddpg", "batch_size", default=128),
        warmup_steps=view.integer("ddpg", "warmup_steps", default=1000),
        ou_theta=view.number("ddpg", "ou_theta", default=0.15),
        ou_mu=view.number("ddpg", "ou_mu", default=0.0),
        ou_sigma=view.number("ddpg", "ou_sigma", default=0.3),
        target_update_days=view.integer("ddpg", "target_update_days", default=10),
        steps_per_day=1440 // step_minutes,
        critic_loss=view.text("ddpg", "critic_loss", default="mae"),
        train_fraction=view.number("ddpg", "train_fraction", default=0.8),
        per_host_agents=view.boolean("ddpg", "per_host_agents", default=False),
    )
    try:
        ddpg.validate()
    except DomainError as exc:
        raise ConfigError(f"{path}: [ddpg]: {exc}") from exc

    return ScenarioConfig(path, name, seed, output_dir, source, step_minutes,
                          trace_file, capacity_file, synthetic, cost, bindings,
                          compare, baseline, ddpg, reward_attribution)


class _View:
    """Typed, error-naming access to a parsed config."""

    def __init__(self, parser: configparser.ConfigParser, path: Path):
        self.parser = parser
        self.path = path

    def _raw(self, section, key, required, default):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise ConfigError(f"{self.path}: missing required key {section}.{key}")
        return default

    def text(self, section, key, required=False, default=None):
        return self._raw(section, key, required, default)

    def integer(self, section, key, required=False, default=None):
        raw = self._raw(section, key, required, None)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{self.path}: {section}.{key} must be an integer, "
                              f"got {raw!r}") from None

    def number(self, section, key, required=False, default=None):
        raw = self._raw(section, key, required, None)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{self.path}: {section}.{key} must be a number, "
                              f"got {raw!r}") from None

    def boolean(self, section, key, default=False):
        raw = self._raw(section, key, False, None)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{self.path}: {section}.{key} must be a boolean, got {raw!r}")


def _parse_spec(token: str, path: Path, where: str) -> StrategySpec:
    try:
        return StrategySpec.parse(token)
    except DomainError as exc:
        raise ConfigError(f"{path}: {where}: {exc}") from exc


def _parse_tiers(text: str | None, path: Path):
    """Parse 'upper:discount' pairs, e.g. '15:0,120:0.10,720:0.15,inf:0.30'.

    Lower bounds are implied by contiguity; the final upper bound must be
    'inf'.
    """
    if text is None:
        return DEFAULT_DISCOUNT_TIERS
    tiers = []
    prev_upper = 0.0
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{path}: cost.discount_tiers is empty")
    for part in parts:
        upper_text, _, disc_text = part.partition(":")
        if not disc_text:
            raise ConfigError(
                f"{path}: cost.discount_tiers entry {part!r} must be upper:discount")
        try:
            upper = math.inf if upper_text.strip() == "inf" else float(upper_text)
            disc = float(disc_text)
        except ValueError:
            raise ConfigError(
                f"{path}: cost.discount_tiers entry {part!r} has a bad number") from None
        tiers.append((prev_upper, upper, disc))
        prev_upper = upper
    return tuple(tiers)


def _resolve(config_path: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (config_path.parent / p)
