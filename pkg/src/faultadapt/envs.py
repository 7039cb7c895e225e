"""Two deterministic kinematic environments and a declarative fault-injection layer.

QuadCrawler: a side-view four-legged crawler whose stance feet push the body
forward; reward is forward displacement minus a control cost. ReachArm: a
planar three-link arm reaching a random goal; reward is negative end-effector
distance. Both are pure joint-space velocity-control kinematics, which is
enough to carry the fault semantics (range-of-motion limits, shortened links,
frozen sensors, position slippage) that the study manipulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, RunAborted
from .numerics import RngStream

QUAD_CRAWLER = "quad_crawler"
REACH_ARM = "reach_arm"

ROM_RESTRICTION = "rom_restriction"
LINK_SHORTEN_SEVERED = "link_shorten_severed"
LINK_SHORTEN_UNSEVERED = "link_shorten_unsevered"
FROZEN_SENSOR = "frozen_sensor"
POSITION_SLIPPAGE = "position_slippage"

FAULT_KINDS = (
    ROM_RESTRICTION,
    LINK_SHORTEN_SEVERED,
    LINK_SHORTEN_UNSEVERED,
    FROZEN_SENSOR,
    POSITION_SLIPPAGE,
)

# Required extra parameters per fault kind.
_FAULT_PARAMS = {
    ROM_RESTRICTION: ("joint", "new_range"),
    LINK_SHORTEN_SEVERED: ("leg", "factor"),
    LINK_SHORTEN_UNSEVERED: ("leg", "factor"),
    FROZEN_SENSOR: ("joint", "frozen_value"),
    POSITION_SLIPPAGE: ("joint", "slip"),
}


@dataclass(frozen=True)
class FaultSpec:
    """Declarative description of one hardware fault."""

    kind: str
    joint: int | None = None
    leg: int | None = None
    new_range: tuple[float, float] | None = None
    factor: float | None = None
    frozen_value: float | None = None
    slip: float | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        required = _FAULT_PARAMS[self.kind]
        for name in ("joint", "leg", "new_range", "factor", "frozen_value", "slip"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ConfigError(f"fault {self.kind!r} requires parameter {name!r}")
            if name not in required and value is not None:
                raise ConfigError(f"fault {self.kind!r} does not take parameter {name!r}")
        if self.new_range is not None and not self.new_range[0] < self.new_range[1]:
            raise ConfigError("fault new_range must satisfy min < max")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for name in _FAULT_PARAMS[self.kind]:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FaultSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("fault spec must be an object with a 'kind' key")
        kind = data["kind"]
        if kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {kind!r}")
        allowed = set(_FAULT_PARAMS[kind]) | {"kind"}
        for key in data:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in fault spec")
        kwargs = {k: v for k, v in data.items() if k != "kind"}
        if "new_range" in kwargs:
            kwargs["new_range"] = tuple(float(v) for v in kwargs["new_range"])
        return cls(kind=kind, **kwargs)


@dataclass(frozen=True)
class EnvConfig:
    """Immutable environment description; faults are layered on via apply_fault."""

    kind: str
    horizon: int
    delta_max: float
    joint_low: tuple[float, ...]
    joint_high: tuple[float, ...]
    # QuadCrawler geometry
    leg_offsets: tuple[float, ...] = ()
    upper_len: float = 0.0
    lower_len: float = 0.0
    body_height: float = 0.0
    ctrl_cost: float = 0.0
    # ReachArm geometry
    link_lengths: tuple[float, ...] = ()
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self):
        if self.kind not in (QUAD_CRAWLER, REACH_ARM):
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.delta_max <= 0.0:
            raise ConfigError("delta_max must be positive")
        if len(self.joint_low) != len(self.joint_high):
            raise ConfigError("joint range bounds differ in length")
        for lo, hi in zip(self.joint_low, self.joint_high):
            if not lo < hi:
                raise ConfigError("every joint range needs min < max")

    @property
    def n_joints(self) -> int:
        return len(self.joint_low)

    @property
    def n_legs(self) -> int:
        return len(self.leg_offsets)

    @property
    def action_dim(self) -> int:
        return self.n_joints

    @property
    def obs_dim(self) -> int:
        if self.kind == QUAD_CRAWLER:
            # sensed joint angles + per-leg contact flags + previous displacement
            return self.n_joints + self.n_legs + 1
        # sensed joint angles + sensed end-effector + goal
        return self.n_joints + 4


# Crawler constants: 4 legs, hip range +-30 deg, ankle range [30, 70] deg.
_CRAWLER_HIP_RANGE = (-0.5236, 0.5236)
_CRAWLER_ANKLE_RANGE = (0.5236, 1.2217)
_CRAWLER_ANKLE_INIT = 0.8727


def quad_crawler_config(faults: tuple[FaultSpec, ...] = ()) -> EnvConfig:
    low, high = [], []
    for _ in range(4):
        low += [_CRAWLER_HIP_RANGE[0], _CRAWLER_ANKLE_RANGE[0]]
        high += [_CRAWLER_HIP_RANGE[1], _CRAWLER_ANKLE_RANGE[1]]
    config = EnvConfig(
        kind=QUAD_CRAWLER,
        horizon=200,
        delta_max=0.05,
        joint_low=tuple(low),
        joint_high=tuple(high),
        leg_offsets=(-0.5, -0.25, 0.25, 0.5),
        upper_len=0.5,
        lower_len=0.5,
        body_height=0.85,
        ctrl_cost=0.01,
    )
    for fault in faults:
        config = apply_fault(config, fault)
    return config


def reach_arm_config(faults: tuple[FaultSpec, ...] = ()) -> EnvConfig:
    config = EnvConfig(
        kind=REACH_ARM,
        horizon=50,
        delta_max=0.1,
        joint_low=(-2.618,) * 3,
        joint_high=(2.618,) * 3,
        link_lengths=(0.5, 0.4, 0.3),
    )
    for fault in faults:
        config = apply_fault(config, fault)
    return config


# The six study faults with their exact parameters.
def hip_rom_fault(leg: int = 0) -> FaultSpec:
    return FaultSpec(ROM_RESTRICTION, joint=2 * leg, new_range=(-0.0873, 0.0873))


def ankle_rom_fault(leg: int = 0) -> FaultSpec:
    return FaultSpec(ROM_RESTRICTION, joint=2 * leg + 1, new_range=(1.1345, 1.2217))


def severed_link_fault(leg: int = 0) -> FaultSpec:
    return FaultSpec(LINK_SHORTEN_SEVERED, leg=leg, factor=0.5)


def unsevered_link_fault(leg: int = 0) -> FaultSpec:
    return FaultSpec(LINK_SHORTEN_UNSEVERED, leg=leg, factor=0.5)


def frozen_sensor_fault(joint: int = 1) -> FaultSpec:
    return FaultSpec(FROZEN_SENSOR, joint=joint, frozen_value=-1.5)


def position_slippage_fault(joint: int = 1) -> FaultSpec:
    return FaultSpec(POSITION_SLIPPAGE, joint=joint, slip=0.05)


FAULT_CATALOG = {
    "hip_rom": hip_rom_fault,
    "ankle_rom": ankle_rom_fault,
    "severed_link": severed_link_fault,
    "unsevered_link": unsevered_link_fault,
    "frozen_sensor": frozen_sensor_fault,
    "position_slippage": position_slippage_fault,
}


def apply_fault(config: EnvConfig, fault: FaultSpec) -> EnvConfig:
    """Return a configuration with the fault active.

    Base joint ranges are kept as-is; restrictions apply through
    effective_ranges so pre-fault ranges stay recoverable.
    """
    if fault.joint is not None and not 0 <= fault.joint < config.n_joints:
        raise ConfigError(f"fault targets joint {fault.joint} outside the robot")
    if fault.leg is not None and not 0 <= fault.leg < max(config.n_legs, 0):
        raise ConfigError(f"fault targets leg {fault.leg} outside the robot")
    if fault.kind in (LINK_SHORTEN_SEVERED, LINK_SHORTEN_UNSEVERED) and config.kind != QUAD_CRAWLER:
        raise ConfigError("link faults only apply to the crawler")
    if fault.kind == ROM_RESTRICTION:
        lo, hi = config.joint_low[fault.joint], config.joint_high[fault.joint]
        nlo, nhi = fault.new_range
        if nlo < lo or nhi > hi:
            raise ConfigError("restricted range must be a sub-interval of the original range")
    return replace(config, faults=config.faults + (fault,))


def effective_ranges(config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    low = np.array(config.joint_low)
    high = np.array(config.joint_high)
    for fault in config.faults:
        if fault.kind == ROM_RESTRICTION:
            low[fault.joint], high[fault.joint] = fault.new_range
    return low, high


def _leg_link_geometry(config: EnvConfig, leg: int) -> tuple[float, float]:
    """(effective lower-link length, dangling passive length) for one crawler leg."""
    lower = config.lower_len
    dangle = 0.0
    for fault in config.faults:
        if fault.kind == LINK_SHORTEN_SEVERED and fault.leg == leg:
            lower = config.lower_len * fault.factor
        elif fault.kind == LINK_SHORTEN_UNSEVERED and fault.leg == leg:
            lower = config.lower_len * fault.factor
            dangle = config.lower_len * (1.0 - fault.factor)
    return lower, dangle


def crawler_foot(config: EnvConfig, leg: int, hip: float, ankle: float) -> tuple[float, float]:
    """Body-relative foot x and foot height for one leg under the active faults.

    knee = (offset + L_u sin(hip), H_body - L_u cos(hip));
    foot = knee + (L_l sin(hip - ankle), -L_l cos(hip - ankle)); an unsevered
    passive segment hangs straight down from the shortened link's tip.
    """
    lower, dangle = _leg_link_geometry(config, leg)
    knee_x = config.leg_offsets[leg] + config.upper_len * math.sin(hip)
    knee_y = config.body_height - config.upper_len * math.cos(hip)
    foot_x = knee_x + lower * math.sin(hip - ankle)
    foot_y = knee_y - lower * math.cos(hip - ankle) - dangle
    return foot_x, foot_y


def forward_kinematics(q, lengths) -> np.ndarray:
    """Planar chain end-effector: sum of links rotated by cumulative joint angles."""
    q = np.asarray(q, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    if q.shape != lengths.shape:
        raise ConfigError("joint vector and link lengths differ in length")
    phi = np.cumsum(q)
    return np.array([np.sum(lengths * np.cos(phi)), np.sum(lengths * np.sin(phi))])


@dataclass
class EnvState:
    """True underlying state of one episode."""

    q: np.ndarray
    step_index: int
    rng: RngStream
    body_x: float = 0.0
    prev_dx: float = 0.0
    goal: np.ndarray | None = None


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    true_q: np.ndarray
    body_dx: float | None = None
    ee: np.ndarray | None = None


def reset(config: EnvConfig, episode_seed: int) -> tuple[EnvState, np.ndarray]:
    """Start a fresh episode; all noise comes from the episode seed."""
    rng = RngStream(episode_seed, "episode")
    low, high = effective_ranges(config)
    if config.kind == REACH_ARM:
        q = rng.gen.uniform(-0.1, 0.1, config.n_joints)
        radius = rng.gen.uniform(0.3, 1.1)
        angle = rng.gen.uniform(-math.pi, math.pi)
        goal = np.array([radius * math.cos(angle), radius * math.sin(angle)])
        state = EnvState(q=np.clip(q, low, high), step_index=0, rng=rng, goal=goal)
    else:
        base = np.empty(config.n_joints)
        base[0::2] = 0.0
        base[1::2] = _CRAWLER_ANKLE_INIT
        q = base + rng.gen.uniform(-0.05, 0.05, config.n_joints)
        state = EnvState(q=np.clip(q, low, high), step_index=0, rng=rng)
    return state, observe(state, config)


def clamp_state(state: EnvState, config: EnvConfig) -> EnvState:
    """Clamp joint angles into the configuration's effective ranges (fault activation)."""
    low, high = effective_ranges(config)
    state.q = np.clip(state.q, low, high)
    return state


def observe(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Sensed observation: frozen sensors corrupt joint entries and anything derived."""
    sensed = state.q.copy()
    for fault in config.faults:
        if fault.kind == FROZEN_SENSOR:
            sensed[fault.joint] = fault.frozen_value
    if config.kind == REACH_ARM:
        ee = forward_kinematics(sensed, config.link_lengths)
        return np.concatenate([sensed, ee, state.goal])
    contacts = np.empty(config.n_legs)
    for leg in range(config.n_legs):
        _, h = crawler_foot(config, leg, state.q[2 * leg], state.q[2 * leg + 1])
        contacts[leg] = 1.0 if h <= 0.0 else 0.0
    return np.concatenate([sensed, contacts, [state.prev_dx]])


def step(config: EnvConfig, state: EnvState, action) -> StepResult:
    """Advance one control step; returns the new observation, reward and diagnostics."""
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (config.action_dim,):
        raise ConfigError(f"action length {a.shape} != {config.action_dim}")
    if not np.isfinite(a).all():
        raise RunAborted("non-finite action")
    a = np.clip(a, -1.0, 1.0)

    dq = a * config.delta_max
    for fault in config.faults:
        if fault.kind == POSITION_SLIPPAGE:
            dq[fault.joint] += fault.slip
    low, high = effective_ranges(config)

    if config.kind == QUAD_CRAWLER:
        before = [
            crawler_foot(config, leg, state.q[2 * leg], state.q[2 * leg + 1])
            for leg in range(config.n_legs)
        ]
        state.q = np.clip(state.q + dq, low, high)
        after = [
            crawler_foot(config, leg, state.q[2 * leg], state.q[2 * leg + 1])
            for leg in range(config.n_legs)
        ]
        # Stance legs stay grounded through the whole joint update and push the body.
        push = [
            after[leg][0] - before[leg][0]
            for leg in range(config.n_legs)
            if before[leg][1] <= 0.0 and after[leg][1] <= 0.0
        ]
        dx = -sum(push) / len(push) if push else 0.0
        state.body_x += dx
        state.prev_dx = dx
        reward = dx - config.ctrl_cost * float(a @ a)
        state.step_index += 1
        return StepResult(
            obs=observe(state, config),
            reward=reward,
            done=state.step_index >= config.horizon,
            true_q=state.q.copy(),
            body_dx=dx,
        )

    state.q = np.clip(state.q + dq, low, high)
    ee = forward_kinematics(state.q, config.link_lengths)
    reward = -float(np.linalg.norm(ee - state.goal))
    state.step_index += 1
    return StepResult(
        obs=observe(state, config),
        reward=reward,
        done=state.step_index >= config.horizon,
        true_q=state.q.copy(),
        ee=ee,
    )


class EnvSession:
    """Stateful wrapper owning episode seeding and auto-reset during training."""

    def __init__(self, config: EnvConfig, episode_rng: RngStream):
        self.config = config
        self.rng = episode_rng
        self.state, self.obs = reset(config, self.rng.next_seed())

    def step(self, action) -> StepResult:
        result = step(self.config, self.state, action)
        if result.done:
            self.state, self.obs = reset(self.config, self.rng.next_seed())
        else:
            self.obs = result.obs
        return result
