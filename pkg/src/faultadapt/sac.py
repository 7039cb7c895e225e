"""Off-policy agent: twin soft Q-networks, ring replay, Polyak targets,
and automatic entropy-temperature adjustment.

All networks are 256x256 ReLU MLPs with Xavier-uniform init. The policy
outputs per-dimension mean and log-std heads; actions are tanh-squashed with
the change-of-variables correction in the log-prob. One gradient round
(critics, actor, temperature, Polyak) runs per environment step once the
buffer holds the minimum fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import EnvSession
from .errors import ConfigError, RunAborted
from .numerics import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    MlpParams,
    MlpShape,
    RngStream,
    adam_step,
    backward,
    forward,
    forward_cached,
    input_gradient,
    squash_with_logprob,
    xavier_uniform_init,
)

HIDDEN = 256


@dataclass(frozen=True)
class SacConfig:
    capacity: int = 100_000
    batch_size: int = 256
    tau: float = 0.005  # target smoothing coefficient
    gamma: float = 0.99
    lr: float = 3e-4  # shared by actor, critics and temperature
    min_fill: int = 1000
    target_entropy: float | None = None  # defaults to -action_dim

    def __post_init__(self):
        if self.batch_size > self.capacity:
            raise ConfigError("batch_size must be <= capacity")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")


class ReplayBuffer:
    """Ring store; insertion beyond capacity overwrites the oldest entry."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def store(self, obs, act, rew, next_obs, done):
        i = self.pos
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = 1.0 if done else 0.0
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        # Oldest-to-newest index order of the live contents.
        if self.size < self.capacity:
            return np.arange(self.size)
        return np.concatenate([np.arange(self.pos, self.capacity), np.arange(self.pos)])

    def contents(self) -> dict[str, np.ndarray]:
        order = self._order()
        return {
            "obs": self.obs[order],
            "act": self.act[order],
            "rew": self.rew[order],
            "next_obs": self.next_obs[order],
            "done": self.done[order],
        }

    def payload(self) -> dict[str, np.ndarray]:
        return self.contents()

    def restore(self, payload: dict[str, np.ndarray]):
        n = payload["obs"].shape[0]
        if n > self.capacity:
            raise ConfigError("restored buffer exceeds capacity")
        for name in ("obs", "act", "rew", "next_obs", "done"):
            getattr(self, name)[:n] = payload[name]
        self.pos = n % self.capacity
        self.size = n


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


def store(buffer: ReplayBuffer, transition) -> ReplayBuffer:
    """Append one (obs, act, rew, next_obs, done) transition."""
    buffer.store(*transition)
    return buffer


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: RngStream) -> Batch:
    """Uniform-with-replacement sample over the live contents."""
    if buffer.size < 1:
        raise ConfigError("cannot sample from an empty buffer")
    idx = rng.gen.integers(0, buffer.size, batch_size)
    return Batch(buffer.obs[idx], buffer.act[idx], buffer.rew[idx],
                 buffer.next_obs[idx], buffer.done[idx])


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, config: SacConfig):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        self.target_entropy = (
            config.target_entropy if config.target_entropy is not None else -float(act_dim)
        )
        self.policy_shape = MlpShape(obs_dim, HIDDEN, HIDDEN, 2 * act_dim, "relu")
        self.q_shape = MlpShape(obs_dim + act_dim, HIDDEN, HIDDEN, 1, "relu")
        nq = self.q_shape.n_params

        self.policy = MlpParams.zeros(self.policy_shape)
        self.q_flat = np.zeros(2 * nq)
        self.q1 = MlpParams(self.q_shape, self.q_flat[:nq])
        self.q2 = MlpParams(self.q_shape, self.q_flat[nq:])
        self.tq_flat = np.zeros(2 * nq)
        self.tq1 = MlpParams(self.q_shape, self.tq_flat[:nq])
        self.tq2 = MlpParams(self.q_shape, self.tq_flat[nq:])
        self.log_alpha = np.zeros(1)

        self.adam_policy = AdamState.zeros(self.policy.flat.size)
        self.adam_q = AdamState.zeros(self.q_flat.size)
        self.adam_alpha = AdamState.zeros(1)

        self._gpolicy_flat = np.zeros_like(self.policy.flat)
        self._gpolicy = MlpParams(self.policy_shape, self._gpolicy_flat)
        self._gq_flat = np.zeros_like(self.q_flat)
        self._gq1 = MlpParams(self.q_shape, self._gq_flat[:nq])
        self._gq2 = MlpParams(self.q_shape, self._gq_flat[nq:])

        self.update_rounds = 0

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, config: SacConfig, init_rng: RngStream) -> "SacAgent":
        agent = cls(obs_dim, act_dim, config)
        # Draw order: policy layers, then q1, then q2; targets copy the online nets.
        for net in (agent.policy, agent.q1, agent.q2):
            d_in = net.shape.in_dim
            net.w1[...] = xavier_uniform_init(d_in, HIDDEN, init_rng)
            net.w2[...] = xavier_uniform_init(HIDDEN, HIDDEN, init_rng)
            net.w3[...] = xavier_uniform_init(HIDDEN, net.shape.out_dim, init_rng)
        agent.tq_flat[...] = agent.q_flat
        return agent

    def copy(self) -> "SacAgent":
        clone = SacAgent(self.obs_dim, self.act_dim, self.config)
        clone.policy.flat[...] = self.policy.flat
        clone.q_flat[...] = self.q_flat
        clone.tq_flat[...] = self.tq_flat
        clone.log_alpha[...] = self.log_alpha
        clone.adam_policy = self.adam_policy.copy()
        clone.adam_q = self.adam_q.copy()
        clone.adam_alpha = self.adam_alpha.copy()
        clone.update_rounds = self.update_rounds
        return clone

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def _policy_heads(self, obs2d: np.ndarray):
        out = forward(self.policy, obs2d)
        mean = out[:, : self.act_dim]
        log_std = np.clip(out[:, self.act_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def act_stochastic(self, obs: np.ndarray, action_rng: RngStream):
        mean, log_std = self._policy_heads(obs[None, :])
        eps = action_rng.gen.standard_normal((1, self.act_dim))
        action, _, logp = squash_with_logprob(mean, log_std, eps)
        return action[0], float(logp[0])

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self._policy_heads(obs[None, :])
        return np.tanh(mean[0])

    # -- persistence --------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"policy.{k}": v for k, v in self.policy.tensors().items()}
        for tag, net in (("q1", self.q1), ("q2", self.q2), ("tq1", self.tq1), ("tq2", self.tq2)):
            out.update({f"{tag}.{k}": v for k, v in net.tensors().items()})
        out["log_alpha"] = self.log_alpha
        out["adam_policy.m"] = self.adam_policy.m
        out["adam_policy.v"] = self.adam_policy.v
        out["adam_q.m"] = self.adam_q.m
        out["adam_q.v"] = self.adam_q.v
        out["adam_alpha.m"] = self.adam_alpha.m
        out["adam_alpha.v"] = self.adam_alpha.v
        return out

    def counters(self) -> dict[str, int]:
        return {
            "update_rounds": self.update_rounds,
            "adam_policy.t": self.adam_policy.t,
            "adam_q.t": self.adam_q.t,
            "adam_alpha.t": self.adam_alpha.t,
        }

    def load_state(self, tensors: dict[str, np.ndarray], counters: dict[str, int]):
        for name, target in self.state_tensors().items():
            target[...] = tensors[name]
        self.update_rounds = int(counters["update_rounds"])
        self.adam_policy.t = int(counters["adam_policy.t"])
        self.adam_q.t = int(counters["adam_q.t"])
        self.adam_alpha.t = int(counters["adam_alpha.t"])


def critic_targets(agent: SacAgent, batch: Batch, config: SacConfig,
                   action_rng: RngStream) -> np.ndarray:
    """Soft Bellman targets y = r + gamma (1-done) (min target-Q - alpha log pi)."""
    n = batch.obs.shape[0]
    mean2, log_std2 = agent._policy_heads(batch.next_obs)
    eps2 = action_rng.gen.standard_normal((n, agent.act_dim))
    a2, _, logp2 = squash_with_logprob(mean2, log_std2, eps2)
    xa2 = np.concatenate([batch.next_obs, a2], axis=1)
    tq = np.minimum(forward(agent.tq1, xa2), forward(agent.tq2, xa2))[:, 0]
    return batch.rew + config.gamma * (1.0 - batch.done) * (tq - agent.alpha * logp2)


def critic_grad(agent: SacAgent, batch: Batch, y: np.ndarray) -> float:
    """Fill the critic grad buffer with d(MSE1 + MSE2)/d(critic params); y is constant."""
    n = batch.obs.shape[0]
    xa = np.concatenate([batch.obs, batch.act], axis=1)
    q1v, cache1 = forward_cached(agent.q1, xa)
    q2v, cache2 = forward_cached(agent.q2, xa)
    e1 = q1v[:, 0] - y
    e2 = q2v[:, 0] - y
    loss = (float(e1 @ e1) + float(e2 @ e2)) / n
    if not math.isfinite(loss):
        raise RunAborted(f"non-finite critic loss ({loss})")
    backward(agent.q1, cache1, (2.0 / n) * e1[:, None], agent._gq1)
    backward(agent.q2, cache2, (2.0 / n) * e2[:, None], agent._gq2)
    return loss


def critic_update(agent: SacAgent, batch: Batch, config: SacConfig,
                  action_rng: RngStream) -> SacAgent:
    """One Adam step of both critics toward the entropy-regularized target."""
    y = critic_targets(agent, batch, config, action_rng)
    critic_grad(agent, batch, y)
    adam_step(agent.q_flat, agent._gq_flat, agent.adam_q, config.lr)
    return agent


def actor_update(agent: SacAgent, batch: Batch, config: SacConfig,
                 action_rng: RngStream) -> np.ndarray:
    """One Adam step on mean(alpha * log pi - min Q); returns the sampled log-probs."""
    eps = action_rng.gen.standard_normal((batch.obs.shape[0], agent.act_dim))
    _, logp = actor_grad(agent, batch, eps)
    adam_step(agent.policy.flat, agent._gpolicy_flat, agent.adam_policy, config.lr)
    return logp


def actor_grad(agent: SacAgent, batch: Batch, eps: np.ndarray):
    """Fill the policy grad buffer for mean(alpha log pi - min Q) at fixed noise."""
    n = batch.obs.shape[0]
    out, cache_p = forward_cached(agent.policy, batch.obs)
    mean = out[:, : agent.act_dim]
    raw = out[:, agent.act_dim :]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    a, u, logp = squash_with_logprob(mean, log_std, eps)
    alpha = agent.alpha

    xa = np.concatenate([batch.obs, a], axis=1)
    q1v, cache1 = forward_cached(agent.q1, xa)
    q2v, cache2 = forward_cached(agent.q2, xa)
    qmin = np.minimum(q1v, q2v)[:, 0]
    loss = float(np.mean(alpha * logp - qmin))
    if not math.isfinite(loss):
        raise RunAborted(f"non-finite actor loss ({loss})")

    # d(-mean qmin)/d(action): route through the per-sample argmin critic.
    sel1 = (q1v <= q2v).astype(np.float64)
    d_a = (
        input_gradient(agent.q1, cache1, -sel1 / n)
        + input_gradient(agent.q2, cache2, (sel1 - 1.0) / n)
    )[:, agent.obs_dim :]

    # Reparameterized chain: u = mean + std * eps with eps fixed;
    # d logp/du = 2 tanh(u), d logp/dlog_std = 2 tanh(u) std eps - 1.
    tanh_u = a
    dsquash = 1.0 - tanh_u * tanh_u
    du_from_q = d_a * dsquash
    d_mean = (alpha / n) * 2.0 * tanh_u + du_from_q
    sig_eps = std * eps
    d_log_std = (alpha / n) * (2.0 * tanh_u * sig_eps - 1.0) + du_from_q * sig_eps
    d_raw = d_log_std * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))

    backward(agent.policy, cache_p, np.concatenate([d_mean, d_raw], axis=1), agent._gpolicy)
    return loss, logp


def temperature_update(agent: SacAgent, batch: Batch, config: SacConfig,
                       action_rng: RngStream | None = None,
                       logp: np.ndarray | None = None) -> SacAgent:
    """One Adam step on mean(-alpha * (log pi + target entropy)).

    Reuses the actor-update sample when provided; otherwise draws a fresh one.
    """
    if logp is None:
        if action_rng is None:
            raise ConfigError("temperature_update needs either logp or an rng")
        mean, log_std = agent._policy_heads(batch.obs)
        eps = action_rng.gen.standard_normal(mean.shape)
        _, _, logp = squash_with_logprob(mean, log_std, eps)
    adam_step(agent.log_alpha, np.array([temperature_grad(agent, logp)]),
              agent.adam_alpha, config.lr)
    return agent


def temperature_grad(agent: SacAgent, logp: np.ndarray) -> float:
    """d mean(-alpha (log pi + target)) / d log_alpha with log pi held constant."""
    return -agent.alpha * float(np.mean(logp + agent.target_entropy))


def polyak_update(targets: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """target <- tau * online + (1 - tau) * target, elementwise in place."""
    if targets.shape != online.shape:
        raise ConfigError("polyak shapes differ")
    if tau == 1.0:
        np.copyto(targets, online)
        return targets
    targets *= 1.0 - tau
    targets += tau * online
    return targets


def sac_step(agent: SacAgent, session: EnvSession, buffer: ReplayBuffer, config: SacConfig,
             action_rng: RngStream, batch_rng: RngStream) -> bool:
    """One environment interaction, then one gradient round once warmed up."""
    obs = session.obs
    action, _ = agent.act_stochastic(obs, action_rng)
    result = session.step(action)
    buffer.store(obs, action, result.reward, result.obs, result.done)
    if buffer.size < config.min_fill:
        return False
    batch = sample_batch(buffer, config.batch_size, batch_rng)
    critic_update(agent, batch, config, action_rng)
    logp = actor_update(agent, batch, config, action_rng)
    temperature_update(agent, batch, config, logp=logp)
    polyak_update(agent.tq_flat, agent.q_flat, config.tau)
    agent.update_rounds += 1
    return True
