"""A small deterministic-policy actor-critic agent for margin selection.

The actor maps a window of recent prediction errors to a margin; the critic
scores (window, margin) pairs.  Exploration adds Ornstein-Uhlenbeck noise to
the actor's raw output before a logistic squash keeps the margin inside
[0, MARGIN_MAX].  Training is off-policy from a uniform replay buffer with
hard target-network copies on a fixed period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from marginsim.errors import CheckpointError, DomainError, NonFiniteGradientError
from marginsim.nets import (
    AdamState,
    DenseNet,
    adam_step,
    backward,
    clone_into,
    clone_net,
    load_network,
    mae_loss,
    mse_loss,
    save_network,
)
from marginsim.seeds import subseed
from marginsim.strategies import MARGIN_MAX
from marginsim.traces import MINUTES_PER_DAY

ACTOR_HIDDEN = (16, 16)
CRITIC_HIDDEN = (32, 32)


@dataclass(frozen=True)
class DdpgConfig:
    """Hyperparameters; the defaults are the ones used throughout the tests."""

    window: int = 10
    learning_rate: float = 0.001
    discount: float = 0.99
    replay_capacity: int = 100_000
    batch_size: int = 128
    warmup_steps: int = 1000
    ou_theta: float = 0.15
    ou_mu: float = 0.0
    ou_sigma: float = 0.3
    target_update_days: int = 10
    steps_per_day: int = MINUTES_PER_DAY // 3
    critic_loss: str = "mae"
    train_fraction: float = 0.8
    per_host_agents: bool = False

    def validate(self) -> None:
        if self.window < 1:
            raise DomainError("window must be >= 1")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if not (0.0 <= self.discount <= 1.0):
            raise DomainError(f"discount must be in [0, 1], got {self.discount}")
        if self.replay_capacity < 1 or self.batch_size < 1:
            raise DomainError("replay_capacity and batch_size must be >= 1")
        if self.batch_size > self.replay_capacity:
            raise DomainError("batch_size cannot exceed replay_capacity")
        if self.warmup_steps < 0:
            raise DomainError("warmup_steps must be >= 0")
        if self.ou_theta <= 0 or self.ou_theta >= 1:
            raise DomainError(f"ou_theta must be in (0, 1), got {self.ou_theta}")
        if self.ou_sigma < 0:
            raise DomainError("ou_sigma must be >= 0")
        if self.target_update_days < 1 or self.steps_per_day < 1:
            raise DomainError("target_update_days and steps_per_day must be >= 1")
        if self.critic_loss not in ("mae", "mse"):
            raise DomainError(f"critic_loss must be 'mae' or 'mse', got {self.critic_loss}")
        if not (0.0 < self.train_fraction < 1.0):
            raise DomainError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class Transition:
    """One experience tuple; state vectors are error windows, oldest first."""

    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray


@dataclass
class UpdateStats:
    """What one `store_and_learn` call did."""

    stored: bool = True
    updated: bool = False
    critic_loss: float = math.nan
    actor_q: float = math.nan
    skipped_nonfinite: bool = False


class OuProcess:
    """Ornstein-Uhlenbeck noise: x <- x + theta*(mu - x) + sigma*N(0, 1)."""

    def __init__(self, theta: float, mu: float, sigma: float, seed: int):
        self.theta = theta
        self.mu = mu
        self.sigma = sigma
        self.state = mu
        self.rng = np.random.default_rng(seed)

    def step(self) -> float:
        self.state = (self.state + self.theta * (self.mu - self.state)
                      + self.sigma * self.rng.standard_normal())
        return self.state

    def reset(self) -> None:
        self.state = self.mu


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int, seed: int):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.size = 0
        self.insert_pos = 0
        self.rng = np.random.default_rng(seed)

    def add(self, transition: Transition) -> None:
        i = self.insert_pos
        self.states[i] = transition.state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_states[i] = transition.next_state
        self.insert_pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int):
        if self.size == 0:
            raise DomainError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=n)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx])


def squash(raw):
    """Logistic map from the actor's raw output to (0, 1)."""
    return 1.0 / (1.0 + np.exp(-raw))


class DdpgAgent:
    """Actor-critic margin policy for one metric (optionally one host)."""

    def __init__(self, config: DdpgConfig, actor: DenseNet, critic: DenseNet,
                 reward_scale: float, seed: int):
        config.validate()
        if reward_scale <= 0:
            raise DomainError(f"reward_scale must be positive, got {reward_scale}")
        expected_actor = [config.window, *ACTOR_HIDDEN, 1]
        expected_critic = [config.window + 1, *CRITIC_HIDDEN, 1]
        if actor.dims() != expected_actor:
            raise CheckpointError(f"actor dims {actor.dims()} != expected {expected_actor}")
        if critic.dims() != expected_critic:
            raise CheckpointError(f"critic dims {critic.dims()} != expected {expected_critic}")
        self.config = config
        self.actor = actor
        self.critic = critic
        self.target_actor = clone_net(actor)
        self.target_critic = clone_net(critic)
        self.actor_opt = AdamState(actor, config.learning_rate)
        self.critic_opt = AdamState(critic, config.learning_rate)
        self.reward_scale = reward_scale
        self.replay = ReplayBuffer(config.replay_capacity, config.window,
                                   subseed(seed, "replay"))
        self.noise = OuProcess(config.ou_theta, config.ou_mu, config.ou_sigma,
                               subseed(seed, "ou"))
        self.warmup_rng = np.random.default_rng(subseed(seed, "warmup"))
        self.loss_fn = mae_loss if config.critic_loss == "mae" else mse_loss
        self.target_period = config.target_update_days * config.steps_per_day
        self.explore_calls = 0
        self.store_calls = 0

    @classmethod
    def create(cls, config: DdpgConfig, seed: int, reward_scale: float = 1.0) -> "DdpgAgent":
        config.validate()
        init_rng = np.random.default_rng(subseed(seed, "init"))
        actor = DenseNet.initialize([config.window, *ACTOR_HIDDEN, 1],
                                    ["relu", "relu", "linear"], init_rng)
        critic = DenseNet.initialize([config.window + 1, *CRITIC_HIDDEN, 1],
                                     ["relu", "relu", "linear"], init_rng)
        return cls(config, actor, critic, reward_scale, seed)

    def act(self, state: np.ndarray, explore: bool) -> float:
        """Margin for `state`; exploration adds noise (and, for the first
        `warmup_steps` exploring calls, replaces the policy with a uniform
        draw so the replay starts with diverse actions)."""
        state = np.asarray(state, dtype=float)
        if state.shape != (self.config.window,):
            raise DomainError(f"state shape {state.shape}, expected ({self.config.window},)")
        if explore:
            self.explore_calls += 1
            if self.explore_calls <= self.config.warmup_steps:
                return float(self.warmup_rng.uniform(0.0, MARGIN_MAX))
        raw = float(self.actor.forward(state)[0])
        if explore:
            raw += self.noise.step()
        return float(min(max(squash(raw), 0.0), MARGIN_MAX))

    def store_and_learn(self, transition: Transition) -> UpdateStats:
        """Store one transition (reward normalized by `reward_scale`) and,
        once the replay is warm, run one batch update of critic and actor."""
        stats = UpdateStats()
        scaled = Transition(np.asarray(transition.state, dtype=float),
                            float(transition.action),
                            float(transition.reward) / self.reward_scale,
                            np.asarray(transition.next_state, dtype=float))
        self.replay.add(scaled)
        self.store_calls += 1
        if self.replay.size >= max(self.config.batch_size, self.config.warmup_steps):
            batch = self.replay.sample(self.config.batch_size)
            if all(np.isfinite(part).all() for part in batch):
                try:
                    stats.critic_loss, stats.actor_q = self._update(batch)
                    stats.updated = True
                except NonFiniteGradientError:
                    stats.skipped_nonfinite = True
            else:
                stats.skipped_nonfinite = True
        if self.store_calls % self.target_period == 0:
            clone_into(self.actor, self.target_actor)
            clone_into(self.critic, self.target_critic)
        return stats

    def _update(self, batch) -> tuple[float, float]:
        states, actions, rewards, next_states = batch
        targets = self._critic_targets(rewards, next_states)
        critic_in = np.hstack([states, actions[:, None]])
        q = self.critic.forward(critic_in)[:, 0]
        loss, dq = self.loss_fn(targets, q)
        critic_grads, _ = backward(self.critic, critic_in, dq[:, None])
        adam_step(self.critic, self.critic_opt, critic_grads)
        actor_grads, mean_q = self._actor_gradients(states)
        ascent = [(-dw, -db) for dw, db in actor_grads]
        adam_step(self.actor, self.actor_opt, ascent)
        return loss, mean_q

    def _critic_targets(self, rewards, next_states) -> np.ndarray:
        raw_next = self.target_actor.forward(next_states)
        next_actions = np.clip(squash(raw_next), 0.0, MARGIN_MAX)
        q_next = self.target_critic.forward(np.hstack([next_states, next_actions]))[:, 0]
        return rewards + self.config.discount * q_next

    def _actor_gradients(self, states):
        """Gradients of mean Q(s, policy(s)) w.r.t. actor parameters.

        The chain runs through the critic's action input and the logistic
        squash; the upper clamp gates the gradient to zero where it binds,
        matching finite differences of the applied action exactly.
        """
        n = states.shape[0]
        raw = self.actor.forward(states)
        sig = squash(raw)
        policy_actions = np.clip(sig, 0.0, MARGIN_MAX)
        critic_in = np.hstack([states, policy_actions])
        _, input_grad = backward(self.critic, critic_in, np.full((n, 1), 1.0 / n))
        gate = (sig <= MARGIN_MAX).astype(float)
        d_raw = input_grad[:, -1:] * sig * (1.0 - sig) * gate
        grads, _ = backward(self.actor, states, d_raw)
        mean_q = float(self.critic.forward(critic_in)[:, 0].mean())
        return grads, mean_q

    def save(self, path: str | Path) -> None:
        """Write the agent (config echo, reward scale, noise state, all four
        networks; replay contents are deliberately excluded) atomically."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w") as fh:
            fh.write("ddpg-agent v1\n")
            c = self.config
            fh.write(f"window {c.window}\n")
            fh.write(f"learning_rate {c.learning_rate!r}\n")
            fh.write(f"discount {c.discount!r}\n")
            fh.write(f"replay_capacity {c.replay_capacity}\n")
            fh.write(f"batch_size {c.batch_size}\n")
            fh.write(f"warmup_steps {c.warmup_steps}\n")
            fh.write(f"ou_theta {c.ou_theta!r}\n")
            fh.write(f"ou_mu {c.ou_mu!r}\n")
            fh.write(f"ou_sigma {c.ou_sigma!r}\n")
            fh.write(f"target_update_days {c.target_update_days}\n")
            fh.write(f"steps_per_day {c.steps_per_day}\n")
            fh.write(f"critic_loss {c.critic_loss}\n")
            fh.write(f"reward_scale {self.reward_scale!r}\n")
            fh.write(f"ou_state {self.noise.state!r}\n")
            for name, net in (("actor", self.actor), ("critic", self.critic),
                              ("target_actor", self.target_actor),
                              ("target_critic", self.target_critic)):
                fh.write(f"net {name}\n")
                save_network(net, fh)
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, config: DdpgConfig) -> "DdpgAgent":
        """Rebuild an agent from `save` output.

        The stored architecture must match `config.window`; training
        counters, optimizer moments, and replay start fresh.
        """
        path = Path(path)
        try:
            fh = path.open()
        except OSError as exc:
            raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
        with fh:
            header = fh.readline().rstrip("\n")
            if header != "ddpg-agent v1":
                raise CheckpointError(f"{path}: bad agent header {header!r}")
            fields = {}
            for key in ("window", "learning_rate", "discount", "replay_capacity",
                        "batch_size", "warmup_steps", "ou_theta", "ou_mu", "ou_sigma",
                        "target_update_days", "steps_per_day", "critic_loss",
                        "reward_scale", "ou_state"):
                line = fh.readline().rstrip("\n")
                parts = line.split(" ", 1)
                if len(parts) != 2 or parts[0] != key:
                    raise CheckpointError(f"{path}: expected field {key!r}, got {line!r}")
                fields[key] = parts[1]
            try:
                stored = DdpgConfig(
                    window=int(fields["window"]),
                    learning_rate=float(fields["learning_rate"]),
                    discount=float(fields["discount"]),
                    replay_capacity=int(fields["replay_capacity"]),
                    batch_size=int(fields["batch_size"]),
                    warmup_steps=int(fields["warmup_steps"]),
                    ou_theta=float(fields["ou_theta"]),
                    ou_mu=float(fields["ou_mu"]),
                    ou_sigma=float(fields["ou_sigma"]),
                    target_update_days=int(fields["target_update_days"]),
                    steps_per_day=int(fields["steps_per_day"]),
                    critic_loss=fields["critic_loss"],
                    train_fraction=config.train_fraction,
                    per_host_agents=config.per_host_agents,
                )
                reward_scale = float(fields["reward_scale"])
                ou_state = float(fields["ou_state"])
            except ValueError as exc:
                raise CheckpointError(f"{path}: bad field value: {exc}") from exc
            if stored.window != config.window:
                raise CheckpointError(
                    f"{path}: checkpoint window {stored.window} does not match "
                    f"configured window {config.window}")
            nets = {}
            for name in ("actor", "critic", "target_actor", "target_critic"):
                marker = fh.readline().rstrip("\n")
                if marker != f"net {name}":
                    raise CheckpointError(f"{path}: expected 'net {name}', got {marker!r}")
                try:
                    nets[name] = load_network(fh)
                except CheckpointError as exc:
                    raise CheckpointError(f"{path}: {name}: {exc}") from exc
        agent = cls(stored, nets["actor"], nets["critic"], reward_scale, seed=0)
        clone_into(nets["target_actor"], agent.target_actor)
        clone_into(nets["target_critic"], agent.target_critic)
        agent.noise.state = ou_state
        return agent


class AgentPool:
    """The agents serving one metric: a single shared one, or one per host."""

    def __init__(self, agents: dict[str, DdpgAgent], shared: bool):
        if not agents:
            raise DomainError("agent pool cannot be empty")
        self.agents = agents
        self.shared = shared
        windows = {a.config.window for a in agents.values()}
        if len(windows) != 1:
            raise DomainError("agents in one pool must share a window size")
        self.window_size = windows.pop()

    def agent_for(self, host_id: str) -> DdpgAgent:
        if self.shared:
            return self.agents["shared"]
        try:
            return self.agents[host_id]
        except KeyError:
            raise DomainError(f"no agent for host {host_id!r}") from None

    def items(self):
        return self.agents.items()


def build_pool(config: DdpgConfig, metric, host_ids: list[str], root_seed: int,
               reward_scale: float) -> AgentPool:
    """Fresh agents for `metric`, seeded from the scenario seed by name."""
    if config.per_host_agents:
        agents = {
            host_id: DdpgAgent.create(
                config, subseed(root_seed, "agent", metric.value, host_id), reward_scale)
            for host_id in host_ids
        }
        return AgentPool(agents, shared=False)
    agent = DdpgAgent.create(config, subseed(root_seed, "agent", metric.value, "shared"),
                             reward_scale)
    return AgentPool({"shared": agent}, shared=True)
