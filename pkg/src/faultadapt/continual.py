"""Three-phase protocol and the four knowledge-transfer approaches.

Phase 1 trains in the normal environment; phase 2 injects a fault; phase 3
continues training in the fault environment after selectively retaining or
discarding the model parameters and the experience storage captured at the
fault boundary. Phase-3 RNG streams restart from the run seed, so the
discard-everything baseline is bit-identical to a fresh run that only ever
saw the fault environment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs, harness, ppo, sac
from .envs import EnvConfig, EnvSession, FaultSpec
from .errors import ConfigError
from .numerics import RngStream

# Sub-stream offsets from the run seed (documented determinism contract).
ENV_OFFSET = 0
INIT_OFFSET = 10007
ACTION_OFFSET = 20011
SHUFFLE_OFFSET = 30013


@dataclass(frozen=True)
class SeedStreams:
    """The four training streams derived from one run seed."""

    env: RngStream
    init: RngStream
    action: RngStream
    shuffle: RngStream

    @classmethod
    def from_seed(cls, run_seed: int) -> "SeedStreams":
        return cls(
            env=RngStream(run_seed + ENV_OFFSET, "env"),
            init=RngStream(run_seed + INIT_OFFSET, "init"),
            action=RngStream(run_seed + ACTION_OFFSET, "action"),
            shuffle=RngStream(run_seed + SHUFFLE_OFFSET, "shuffle"),
        )


@dataclass(frozen=True)
class TransferApproach:
    index: int
    retain_params: bool
    retain_storage: bool


APPROACHES = {
    1: TransferApproach(1, retain_params=True, retain_storage=True),
    2: TransferApproach(2, retain_params=True, retain_storage=False),
    3: TransferApproach(3, retain_params=False, retain_storage=True),
    4: TransferApproach(4, retain_params=False, retain_storage=False),  # baseline
}


@dataclass
class KnowledgeSnapshot:
    """Deep copy of everything the agent knows at the fault boundary."""

    algorithm: str  # "ppo" | "sac"
    tensors: dict[str, np.ndarray]
    counters: dict[str, int]
    storage: dict[str, np.ndarray] | None
    captured_at: int


@dataclass(frozen=True)
class PhasePlan:
    phase1_steps: int
    fault: FaultSpec | None
    phase3_steps: int
    approach: int = 4
    eval_every: int = 10_000
    eval_episodes: int = 10

    def __post_init__(self):
        if self.phase1_steps < 1 or self.phase3_steps < 1:
            raise ConfigError("phase budgets must be positive")
        if self.approach not in APPROACHES:
            raise ConfigError("transfer approach must be one of 1..4")
        if not 1 <= self.eval_every <= max(self.phase1_steps, self.phase3_steps):
            raise ConfigError("eval_every must be positive and within the phase budgets")


def snapshot(agent, storage, captured_at: int = 0) -> KnowledgeSnapshot:
    """Capture agent parameters, optimizer state and storage contents by deep copy."""
    algorithm = "ppo" if isinstance(agent, ppo.PpoAgent) else "sac"
    return KnowledgeSnapshot(
        algorithm=algorithm,
        tensors={k: v.copy() for k, v in agent.state_tensors().items()},
        counters=dict(agent.counters()),
        storage=storage.payload() if storage is not None else None,
        captured_at=captured_at,
    )


def new_storage(algorithm: str, algo_config, env_config: EnvConfig):
    if algorithm == "ppo":
        return ppo.RolloutMemory(algo_config.n_steps, env_config.obs_dim, env_config.action_dim)
    return sac.ReplayBuffer(algo_config.capacity, env_config.obs_dim, env_config.action_dim)


def new_agent(algorithm: str, algo_config, env_config: EnvConfig, init_rng: RngStream,
              total_updates: int = 1):
    if algorithm == "ppo":
        return ppo.PpoAgent.create(env_config.obs_dim, env_config.action_dim, algo_config,
                                   init_rng, total_updates=total_updates)
    return sac.SacAgent.create(env_config.obs_dim, env_config.action_dim, algo_config, init_rng)


def apply_transfer(snap: KnowledgeSnapshot, approach: TransferApproach, algo_config,
                   env_config: EnvConfig, init_rng: RngStream, total_updates: int = 1):
    """Build the phase-3 agent and storage from the snapshot under one approach.

    Retained components are bit-equal to the snapshot; discarded components are
    freshly initialized from init_rng. A retained-parameter agent keeps its
    optimizer moments but restarts the learning-rate schedule.
    """
    agent = new_agent(snap.algorithm, algo_config, env_config, init_rng, total_updates)
    storage = new_storage(snap.algorithm, algo_config, env_config)
    if approach.retain_params:
        agent.load_state(snap.tensors, snap.counters)
        if snap.algorithm == "ppo":
            ppo.reset_schedule(agent, total_updates)
    if approach.retain_storage and snap.storage is not None:
        storage.restore(snap.storage)
    return agent, storage


def train_phase(algorithm: str, agent, storage, env_config: EnvConfig, budget: int,
                run_seed: int, streams: SeedStreams, eval_every: int,
                eval_episodes: int = 10) -> harness.LearningCurve:
    """Train for `budget` environment steps with periodic paused evaluations.

    The rollout memory (PPO) is left holding the experiences collected since
    the last update, so the end-of-phase snapshot captures them.
    """
    curve = harness.LearningCurve()
    curve.add(harness.evaluate_policy(agent, env_config, eval_episodes,
                                      harness.eval_stream(run_seed, 0), step=0))
    session = EnvSession(env_config, streams.env)

    if algorithm == "ppo":
        if storage.full:
            # Retained full memory: consumed by the first update, before any new steps.
            ppo.ppo_update(agent, storage, streams.shuffle)
        steps = 0
        while steps < budget:
            ppo.collect_step(agent, session, storage, streams.action)
            steps += 1
            if storage.full:
                storage.bootstrap_value = agent.predict_value(session.obs)
                if steps < budget:
                    ppo.ppo_update(agent, storage, streams.shuffle)
            if steps % eval_every == 0:
                curve.add(harness.evaluate_policy(agent, env_config, eval_episodes,
                                                  harness.eval_stream(run_seed, steps),
                                                  step=steps))
    elif algorithm == "sac":
        steps = 0
        while steps < budget:
            sac.sac_step(agent, session, storage, agent.config, streams.action, streams.shuffle)
            steps += 1
            if steps % eval_every == 0:
                curve.add(harness.evaluate_policy(agent, env_config, eval_episodes,
                                                  harness.eval_stream(run_seed, steps),
                                                  step=steps))
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    return curve


def ppo_total_updates(budget: int, n_steps: int, retained_memory: bool = False) -> int:
    """Planned update count for the lr schedule over one phase."""
    return max(1, budget // n_steps + (1 if retained_memory else 0))


def run_adaptation(snap: KnowledgeSnapshot, normal_env: EnvConfig, algo_config,
                   plan: PhasePlan, run_seed: int):
    """Phases 2-3: inject the fault, transfer knowledge, continue training."""
    fault_env = envs.apply_fault(normal_env, plan.fault) if plan.fault else normal_env
    approach = APPROACHES[plan.approach]
    streams = SeedStreams.from_seed(run_seed)
    if snap.algorithm == "ppo":
        retained_full = (approach.retain_storage and snap.storage is not None
                         and snap.storage["obs"].shape[0] > 0)
        total3 = ppo_total_updates(plan.phase3_steps, algo_config.n_steps, retained_full)
    else:
        total3 = 1
    agent, storage = apply_transfer(snap, approach, algo_config, fault_env,
                                    streams.init, total3)
    curve = train_phase(snap.algorithm, agent, storage, fault_env, plan.phase3_steps,
                        run_seed, streams, plan.eval_every, plan.eval_episodes)
    return curve, agent, storage, fault_env


def run_three_phase(normal_env: EnvConfig, algorithm: str, algo_config, plan: PhasePlan,
                    run_seed: int):
    """Full protocol for one seed; returns both curves plus the boundary snapshot."""
    streams = SeedStreams.from_seed(run_seed)
    total1 = (ppo_total_updates(plan.phase1_steps, algo_config.n_steps)
              if algorithm == "ppo" else 1)
    agent = new_agent(algorithm, algo_config, normal_env, streams.init, total1)
    storage = new_storage(algorithm, algo_config, normal_env)
    curve1 = train_phase(algorithm, agent, storage, normal_env, plan.phase1_steps,
                         run_seed, streams, plan.eval_every, plan.eval_episodes)
    snap = snapshot(agent, storage, captured_at=plan.phase1_steps)
    curve3, agent3, storage3, fault_env = run_adaptation(snap, normal_env, algo_config,
                                                         plan, run_seed)
    return curve1, curve3, snap, agent3, storage3
