"""On-policy agent: clipped-surrogate policy optimization with GAE.

Policy and value nets are separate 64x64 tanh MLPs stored in one flat
parameter vector (shared Adam state). The policy head also carries a
learnable per-dimension log standard deviation, initialized to zero.
Actions are sampled unsquashed and only clamped at the environment
boundary; stored log-probs are of the unclamped sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import EnvSession
from .errors import ConfigError, RunAborted
from .numerics import (
    LOG_2PI,
    AdamState,
    MlpParams,
    MlpShape,
    RngStream,
    adam_step,
    backward,
    forward,
    forward_cached,
    gaussian_logprob,
    gaussian_logprob_batch,
    orthogonal_init,
)

HIDDEN = 64


@dataclass(frozen=True)
class PpoConfig:
    n_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    c1: float = 0.5  # value-loss coefficient
    c2: float = 0.0  # entropy coefficient
    lr: float = 3e-4
    decay: float = 1.0  # linear lr-decay factor (1.0 standard, 0.25 crawler)

    def __post_init__(self):
        if self.minibatch_size > self.n_steps:
            raise ConfigError("minibatch_size must be <= n_steps")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")


class RolloutMemory:
    """Fixed-capacity on-policy store; cleared after every update."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.value = np.zeros(capacity)
        self.logp = np.zeros(capacity)
        self.pos = 0
        self.bootstrap_value = 0.0
        # True when the contents were restored from a snapshot: their stored
        # log-probs must be used as-is for the first ratio computation.
        self.stale_logp = False

    def __len__(self) -> int:
        return self.pos

    @property
    def full(self) -> bool:
        return self.pos == self.capacity

    def add(self, obs, act, rew, done, value, logp):
        i = self.pos
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.done[i] = 1.0 if done else 0.0
        self.value[i] = value
        self.logp[i] = logp
        self.pos = i + 1

    def clear(self):
        self.pos = 0
        self.bootstrap_value = 0.0
        self.stale_logp = False

    def payload(self) -> dict[str, np.ndarray]:
        n = self.pos
        return {
            "obs": self.obs[:n].copy(),
            "act": self.act[:n].copy(),
            "rew": self.rew[:n].copy(),
            "done": self.done[:n].copy(),
            "value": self.value[:n].copy(),
            "logp": self.logp[:n].copy(),
            "bootstrap_value": np.array([self.bootstrap_value]),
        }

    def restore(self, payload: dict[str, np.ndarray]):
        n = payload["obs"].shape[0]
        if n > self.capacity:
            raise ConfigError("restored memory exceeds capacity")
        self.clear()
        for name in ("obs", "act", "rew", "done", "value", "logp"):
            getattr(self, name)[:n] = payload[name]
        self.pos = n
        self.bootstrap_value = float(payload["bootstrap_value"][0])
        self.stale_logp = n > 0


class PpoAgent:
    def __init__(self, obs_dim: int, act_dim: int, config: PpoConfig, theta: np.ndarray,
                 adam: AdamState, update_count: int = 0, total_updates: int = 1):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        self.policy_shape = MlpShape(obs_dim, HIDDEN, HIDDEN, act_dim, "tanh", log_std_dim=act_dim)
        self.value_shape = MlpShape(obs_dim, HIDDEN, HIDDEN, 1, "tanh")
        np_policy = self.policy_shape.n_params
        self.theta = theta
        self.policy = MlpParams(self.policy_shape, theta[:np_policy])
        self.value = MlpParams(self.value_shape, theta[np_policy:])
        self.adam = adam
        self.grad = np.zeros_like(theta)
        self._gpolicy = MlpParams(self.policy_shape, self.grad[:np_policy])
        self._gvalue = MlpParams(self.value_shape, self.grad[np_policy:])
        self.update_count = update_count
        self.total_updates = total_updates

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, config: PpoConfig, init_rng: RngStream,
               total_updates: int = 1) -> "PpoAgent":
        pshape = MlpShape(obs_dim, HIDDEN, HIDDEN, act_dim, "tanh", log_std_dim=act_dim)
        vshape = MlpShape(obs_dim, HIDDEN, HIDDEN, 1, "tanh")
        theta = np.zeros(pshape.n_params + vshape.n_params)
        agent = cls(obs_dim, act_dim, config, theta, AdamState.zeros(theta.size),
                    total_updates=total_updates)
        root2 = math.sqrt(2.0)
        # Draw order is part of the determinism contract: policy w1, w2, w3, then value.
        agent.policy.w1[...] = orthogonal_init(obs_dim, HIDDEN, root2, init_rng)
        agent.policy.w2[...] = orthogonal_init(HIDDEN, HIDDEN, root2, init_rng)
        agent.policy.w3[...] = orthogonal_init(HIDDEN, act_dim, 0.01, init_rng)
        agent.value.w1[...] = orthogonal_init(obs_dim, HIDDEN, root2, init_rng)
        agent.value.w2[...] = orthogonal_init(HIDDEN, HIDDEN, root2, init_rng)
        agent.value.w3[...] = orthogonal_init(HIDDEN, 1, 1.0, init_rng)
        return agent

    def copy(self) -> "PpoAgent":
        return PpoAgent(self.obs_dim, self.act_dim, self.config, self.theta.copy(),
                        self.adam.copy(), self.update_count, self.total_updates)

    # -- acting ------------------------------------------------------------

    def act(self, obs: np.ndarray, action_rng: RngStream):
        """Sample an (unclamped) action; returns (action, log_prob, value)."""
        mean = forward(self.policy, obs[None, :])[0]
        std = np.exp(self.policy.log_std)
        action = mean + std * action_rng.gen.standard_normal(self.act_dim)
        logp = gaussian_logprob(mean, self.policy.log_std, action)
        value = float(forward(self.value, obs[None, :])[0, 0])
        return action, logp, value

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.policy, obs[None, :])[0]

    def predict_value(self, obs: np.ndarray) -> float:
        return float(forward(self.value, obs[None, :])[0, 0])

    # -- persistence --------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"policy.{k}": v for k, v in self.policy.tensors().items()}
        out.update({f"value.{k}": v for k, v in self.value.tensors().items()})
        out["adam.m"] = self.adam.m
        out["adam.v"] = self.adam.v
        return out

    def counters(self) -> dict[str, int]:
        return {
            "update_count": self.update_count,
            "total_updates": self.total_updates,
            "adam.t": self.adam.t,
        }

    def load_state(self, tensors: dict[str, np.ndarray], counters: dict[str, int]):
        for name, target in self.state_tensors().items():
            target[...] = tensors[name]
        self.update_count = int(counters["update_count"])
        self.total_updates = int(counters["total_updates"])
        self.adam.t = int(counters["adam.t"])


def collect_step(agent: PpoAgent, session: EnvSession, memory: RolloutMemory,
                 action_rng: RngStream):
    """One environment interaction appended to the memory."""
    obs = session.obs
    action, logp, value = agent.act(obs, action_rng)
    result = session.step(action)
    memory.add(obs, action, result.reward, result.done, value, logp)


def collect_rollout(agent: PpoAgent, session: EnvSession, memory: RolloutMemory,
                    action_rng: RngStream) -> RolloutMemory:
    """Fill an empty memory with exactly n_steps transitions under the current policy."""
    if len(memory) != 0:
        raise ConfigError("collect_rollout requires an empty memory")
    while not memory.full:
        collect_step(agent, session, memory, action_rng)
    memory.bootstrap_value = agent.predict_value(session.obs)
    return memory


def compute_gae(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Backward GAE recursion; returns raw (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ConfigError("GAE inputs must have equal lengths")
    n = rewards.shape[0]
    adv = np.empty(n)
    gae = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        gae = delta + gamma * lam * mask * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def lr_schedule(initial: float, k: int, total: int, decay: float) -> float:
    """Linear decay: initial * (1 - decay * k / total), floored at zero."""
    if total < 1 or not 0 <= k:
        raise ConfigError("need total >= 1 and k >= 0")
    return max(0.0, initial * (1.0 - decay * k / total))


def reset_schedule(agent: PpoAgent, total_updates: int | None = None) -> PpoAgent:
    """Restart the learning-rate schedule (used at the fault boundary)."""
    agent.update_count = 0
    if total_updates is not None:
        agent.total_updates = max(1, total_updates)
    return agent


def _minibatch_rows(perm: np.ndarray, size: int):
    for start in range(0, perm.shape[0], size):
        yield perm[start : start + size]


def ppo_update(agent: PpoAgent, memory: RolloutMemory, shuffle_rng: RngStream) -> PpoAgent:
    """One full optimization pass over the memory; memory is cleared afterward."""
    if not memory.full:
        raise ConfigError("ppo_update requires a full memory")
    cfg = agent.config
    n = len(memory)
    obs, act = memory.obs[:n], memory.act[:n]

    adv_raw, returns = compute_gae(memory.rew[:n], memory.value[:n], memory.done[:n],
                                   memory.bootstrap_value, cfg.gamma, cfg.gae_lambda)
    adv = (adv_raw - adv_raw.mean()) / (adv_raw.std() + 1e-8)
    lr = lr_schedule(cfg.lr, agent.update_count, agent.total_updates, cfg.decay)

    perm0 = shuffle_rng.gen.permutation(n)
    if memory.stale_logp:
        # Snapshot-restored experiences: their stored log-probs define the ratio.
        logp_old = memory.logp[:n].copy()
    else:
        # Recompute reference log-probs through the same batched kernels the
        # epochs use, so the epoch-0 ratio is exactly 1 bit-for-bit.
        logp_old = np.empty(n)
        for rows in _minibatch_rows(perm0, cfg.minibatch_size):
            mean = forward(agent.policy, obs[rows])
            logp_old[rows] = gaussian_logprob_batch(mean, agent.policy.log_std, act[rows])

    for epoch in range(cfg.epochs):
        perm = perm0 if epoch == 0 else shuffle_rng.gen.permutation(n)
        for rows in _minibatch_rows(perm, cfg.minibatch_size):
            _update_minibatch(agent, obs[rows], act[rows], adv[rows], returns[rows],
                              logp_old[rows], lr)

    memory.clear()
    agent.update_count += 1
    return agent


def _update_minibatch(agent, obs_mb, act_mb, adv_mb, ret_mb, logp_old_mb, lr):
    minibatch_grad(agent, obs_mb, act_mb, adv_mb, ret_mb, logp_old_mb)
    adam_step(agent.theta, agent.grad, agent.adam, lr)


def minibatch_grad(agent, obs_mb, act_mb, adv_mb, ret_mb, logp_old_mb) -> float:
    """Fill agent.grad with the clipped-surrogate + value + entropy loss gradient."""
    cfg = agent.config
    nb = obs_mb.shape[0]
    policy, value = agent.policy, agent.value

    mean, cache_p = forward_cached(policy, obs_mb)
    log_std = policy.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = act_mb - mean
    z2 = diff * diff * inv_var
    logp_new = -0.5 * z2.sum(axis=1) - log_std.sum() - 0.5 * agent.act_dim * LOG_2PI

    ratio = np.exp(logp_new - logp_old_mb)
    surr1 = ratio * adv_mb
    surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv_mb
    active = surr1 <= surr2  # unclipped branch carries the gradient
    policy_loss = -np.minimum(surr1, surr2).mean()

    v, cache_v = forward_cached(value, obs_mb)
    verr = v[:, 0] - ret_mb
    value_loss = cfg.c1 * float(verr @ verr) / nb

    entropy = float(log_std.sum()) + 0.5 * agent.act_dim * (1.0 + LOG_2PI)
    loss = policy_loss + value_loss - cfg.c2 * entropy
    if not math.isfinite(loss):
        raise RunAborted(f"non-finite loss in policy update (loss={loss})")

    coef = -(adv_mb * ratio * active) / nb
    d_mean = coef[:, None] * (diff * inv_var)
    backward(policy, cache_p, d_mean, agent._gpolicy)
    agent._gpolicy.log_std[...] = (coef[:, None] * (z2 - 1.0)).sum(axis=0) - cfg.c2

    d_v = (2.0 * cfg.c1 / nb) * verr[:, None]
    backward(value, cache_v, d_v, agent._gvalue)
    return loss
