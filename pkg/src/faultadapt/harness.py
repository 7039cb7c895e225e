"""Evaluation machinery: periodic policy evaluation, multi-seed aggregation with
t-distribution confidence intervals, adaptation-speed savings, state-visitation
heatmaps, and the random-search hyperparameter machinery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import envs
from .errors import ConfigError
from .numerics import RngStream, derive_seed

EVAL_KEY = 0xE7A1
HPO_KEY = 0x4B05

# Mean undiscounted return of a uniform-random policy on the reach arm,
# frozen from a 1000-episode Monte-Carlo run (scripts/compute_reference.py).
REACH_RANDOM_POLICY_RETURN = -63.933342151804986


@dataclass(frozen=True)
class EvalRecord:
    step: int
    mean_return: float
    episode_returns: tuple[float, ...]


@dataclass
class LearningCurve:
    """Ordered evaluation records for one run (one seed, one phase)."""

    records: list[EvalRecord] = field(default_factory=list)

    def add(self, record: EvalRecord):
        if self.records and record.step <= self.records[-1].step:
            raise ConfigError("curve step indices must be strictly increasing")
        self.records.append(record)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])

    @property
    def means(self) -> np.ndarray:
        return np.array([r.mean_return for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class CiSummary:
    step: int
    mean: float
    ci_low: float
    ci_high: float
    n: int


def eval_stream(run_seed: int, step: int) -> RngStream:
    """Evaluation stream, independent of every training stream."""
    return RngStream(derive_seed(EVAL_KEY, run_seed, step), "eval")


def evaluate_policy(agent, env_config: envs.EnvConfig, n_episodes: int = 10,
                    eval_rng: RngStream | None = None, step: int = 0) -> EvalRecord:
    """Run deterministic-action episodes; training state is untouched."""
    rng = eval_rng if eval_rng is not None else RngStream(derive_seed(EVAL_KEY, 0, step))
    returns = []
    for _ in range(n_episodes):
        state, obs = envs.reset(env_config, rng.next_seed())
        total = 0.0
        done = False
        while not done:
            result = envs.step(env_config, state, agent.act_deterministic(obs))
            total += result.reward
            obs = result.obs
            done = result.done
        returns.append(total)
    return EvalRecord(step=step, mean_return=float(np.mean(returns)),
                      episode_returns=tuple(returns))


def aggregate(curves: list[LearningCurve]) -> list[CiSummary]:
    """Per evaluation point: mean across runs and 95% t-distribution CI."""
    if not curves:
        raise ConfigError("aggregate needs at least one curve")
    grid = curves[0].steps
    for curve in curves[1:]:
        if not np.array_equal(curve.steps, grid):
            raise ConfigError("curves do not share a common step grid")
    data = np.stack([c.means for c in curves])  # (runs, points)
    n = data.shape[0]
    means = data.mean(axis=0)
    out = []
    for j, step in enumerate(grid):
        if n >= 2:
            s = float(data[:, j].std(ddof=1))
            half = float(stats.t.ppf(0.975, n - 1)) * s / math.sqrt(n)
        else:
            half = 0.0
        out.append(CiSummary(int(step), float(means[j]), float(means[j] - half),
                             float(means[j] + half), n))
    return out


NOT_REACHED = None  # sentinel for approaches that never reach the threshold


def adaptation_savings(approach: list[CiSummary], baseline: list[CiSummary]):
    """Percentage of time steps saved relative to the baseline.

    Threshold is the baseline's 95% CI lower bound at the final assessed step;
    both curves are searched for the first grid step whose mean reaches it.
    Returns NOT_REACHED when the approach never reaches the threshold.
    """
    steps_a = [c.step for c in approach]
    steps_b = [c.step for c in baseline]
    if steps_a != steps_b:
        raise ConfigError("savings requires both summaries on the same step grid")
    threshold = baseline[-1].ci_low
    t_approach = next((c.step for c in approach if c.mean >= threshold), None)
    if t_approach == 0:
        return 100.0
    t_baseline = next((c.step for c in baseline if c.mean >= threshold), None)
    if t_baseline is None or t_baseline == 0:
        raise ConfigError("baseline never reaches its own final CI lower bound")
    if t_approach is None:
        return NOT_REACHED
    return 100.0 - (t_approach / t_baseline) * 100.0


@dataclass(frozen=True)
class HeatmapData:
    """Per-joint visitation probabilities over normalized angle bins."""

    probs: np.ndarray  # (n_joints, bins); each row sums to 1


def state_visitation(agent, env_config: envs.EnvConfig, episodes: int = 100,
                     bins: int = 25, rng: RngStream | None = None) -> HeatmapData:
    """Histogram of true joint angles visited by the deterministic policy.

    Angles are normalized over each joint's ORIGINAL (pre-fault) range.
    """
    if bins < 2:
        raise ConfigError("need bins >= 2")
    rng = rng if rng is not None else RngStream(derive_seed(EVAL_KEY, 99, 0))
    low = np.array(env_config.joint_low)
    span = np.array(env_config.joint_high) - low
    counts = np.zeros((env_config.n_joints, bins))
    edges = np.linspace(0.0, 1.0, bins + 1)
    for _ in range(episodes):
        state, obs = envs.reset(env_config, rng.next_seed())
        angles = [state.q.copy()]
        done = False
        while not done:
            result = envs.step(env_config, state, agent.act_deterministic(obs))
            angles.append(result.true_q)
            obs = result.obs
            done = result.done
        normalized = (np.stack(angles) - low) / span
        for j in range(env_config.n_joints):
            counts[j] += np.histogram(normalized[:, j], bins=edges)[0]
    return HeatmapData(probs=counts / counts.sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Hyperparameter random search

CHOICE = "choice"
UNIFORM = "uniform"


@dataclass(frozen=True)
class HpoSpace:
    """Ordered mapping of hyperparameter name to a finite set or an interval."""

    params: tuple[tuple[str, tuple], ...]

    def __post_init__(self):
        for name, domain in self.params:
            if domain[0] == CHOICE:
                if not domain[1]:
                    raise ConfigError(f"empty choice set for {name!r}")
            elif domain[0] == UNIFORM:
                if not domain[1] < domain[2]:
                    raise ConfigError(f"interval for {name!r} needs min < max")
            else:
                raise ConfigError(f"unknown domain kind {domain[0]!r}")


def ppo_search_space() -> HpoSpace:
    return HpoSpace(params=(
        ("n_steps", (CHOICE, tuple(range(32, 5001)))),
        ("minibatch_size", (CHOICE, tuple(2 ** k for k in range(2, 14)))),
        ("epochs", (CHOICE, tuple(range(3, 31)))),
        ("clip_eps", (CHOICE, (0.1, 0.2, 0.3))),
        ("gamma", (UNIFORM, 0.8, 0.9997)),
        ("gae_lambda", (UNIFORM, 0.9, 1.0)),
        ("c1", (CHOICE, (0.5, 1.0))),
        ("c2", (UNIFORM, 0.0, 0.01)),
        ("lr", (UNIFORM, 0.000005, 0.006)),
    ))


def sac_search_space() -> HpoSpace:
    return HpoSpace(params=(
        ("capacity", (CHOICE, (10_000, 100_000, 500_000, 1_000_000))),
        ("batch_size", (CHOICE, (16, 64, 256, 512))),
        ("tau", (UNIFORM, 0.0001, 0.1)),
        ("gamma", (UNIFORM, 0.8, 0.9997)),
        ("lr", (UNIFORM, 0.000005, 0.006)),
    ))


def sample_hpo_config(space: HpoSpace, config_seed: int) -> dict:
    """Uniform draw per hyperparameter, fully determined by the config seed."""
    rng = RngStream(derive_seed(HPO_KEY, config_seed), "hpo")
    out = {}
    for name, domain in space.params:
        if domain[0] == CHOICE:
            values = domain[1]
            out[name] = values[int(rng.gen.integers(0, len(values)))]
        else:
            out[name] = float(rng.gen.uniform(domain[1], domain[2]))
    return out


def _final_scores(curves: list[LearningCurve], tail: int = 10) -> np.ndarray:
    return np.array([float(np.mean(c.means[-tail:])) for c in curves])


def _early_area(curves: list[LearningCurve]) -> float:
    steps = curves[0].steps
    means = np.stack([c.means for c in curves]).mean(axis=0)
    k = max(2, math.ceil(0.25 * len(steps)))
    return float(np.trapezoid(means[:k], steps[:k]))


def select_best(results: dict) -> object:
    """Two-step winner: highest asymptotic score, early-learning tie-break.

    `results` maps a config key to that config's list of learning curves.
    Step 1 scores each config by the mean return over the final 10 evaluation
    points averaged across runs; configs within one pooled standard error of
    the best are tied. Step 2 breaks ties by the area under the mean curve
    over the first 25% of evaluation points. Deterministic output.
    """
    if not results:
        raise ConfigError("select_best needs at least one config")
    keys = sorted(results.keys(), key=repr)
    score1, se = {}, {}
    for key in keys:
        runs = _final_scores(results[key])
        if any(len(c) < 10 for c in results[key]):
            raise ConfigError("every config needs >= 10 evaluation points")
        score1[key] = float(runs.mean())
        se[key] = float(runs.std(ddof=1) / math.sqrt(len(runs))) if len(runs) >= 2 else 0.0
    best = max(keys, key=lambda k: score1[k])
    tied = [
        k for k in keys
        if score1[best] - score1[k] <= math.hypot(se[best], se[k])
    ]
    if len(tied) == 1:
        return tied[0]
    return max(tied, key=lambda k: (_early_area(results[k]), repr(k)))
