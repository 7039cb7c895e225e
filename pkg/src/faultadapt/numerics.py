"""Float64 MLP core: forward/backward passes, Adam, initializers, Gaussian policy math.

Every network in this project is a fixed input -> hidden1 -> hidden2 -> output
feedforward net. Parameters live in one contiguous float64 vector with named
views, so optimizer updates and target-network blends are single vectorized ops
and deep copies are trivially bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is expected but not required
    _HAVE_NUMBA = False

from .errors import ConfigError, RunAborted

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Standard splitmix64 finalizer; used only to fold keys into seeds.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*keys: int) -> int:
    """Fold integer keys into a single 64-bit seed, order-sensitively."""
    h = 0x243F6A8885A308D3
    for k in keys:
        h = _splitmix64((h ^ (int(k) & _MASK64)) & _MASK64)
    return h


class RngStream:
    """Named deterministic pseudo-random stream over a 64-bit seed.

    Identical seeds give identical sequences on every platform (PCG64).
    """

    __slots__ = ("seed", "name", "gen")

    def __init__(self, seed: int, name: str = ""):
        self.seed = int(seed) & _MASK64
        self.name = name
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def next_seed(self) -> int:
        """Draw a fresh 63-bit seed for a child stream (e.g. one episode)."""
        return int(self.gen.integers(0, 1 << 63))

    def state(self):
        return self.gen.bit_generator.state

    def __repr__(self):  # pragma: no cover
        return f"RngStream(seed={self.seed}, name={self.name!r})"


# ---------------------------------------------------------------------------
# MLP parameters


@dataclass(frozen=True)
class MlpShape:
    """Architecture of one feedforward net, plus an optional learnable log-std tail."""

    in_dim: int
    hidden1: int
    hidden2: int
    out_dim: int
    activation: str = "tanh"  # hidden-layer activation: "tanh" | "relu"
    log_std_dim: int = 0

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if min(self.in_dim, self.hidden1, self.hidden2, self.out_dim) < 1:
            raise ConfigError("all layer dims must be >= 1")

    def tensor_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        specs = [
            ("w1", (self.in_dim, self.hidden1)),
            ("b1", (self.hidden1,)),
            ("w2", (self.hidden1, self.hidden2)),
            ("b2", (self.hidden2,)),
            ("w3", (self.hidden2, self.out_dim)),
            ("b3", (self.out_dim,)),
        ]
        if self.log_std_dim:
            specs.append(("log_std", (self.log_std_dim,)))
        return specs

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.tensor_specs())


class MlpParams:
    """Named views (w1, b1, w2, b2, w3, b3[, log_std]) into one flat float64 vector."""

    __slots__ = ("shape", "flat", "w1", "b1", "w2", "b2", "w3", "b3", "log_std")

    def __init__(self, shape: MlpShape, flat: np.ndarray):
        if flat.shape != (shape.n_params,) or flat.dtype != np.float64:
            raise ConfigError("backing vector does not match the declared shape")
        self.shape = shape
        self.flat = flat
        off = 0
        for name, tshape in shape.tensor_specs():
            n = int(np.prod(tshape))
            setattr(self, name, flat[off : off + n].reshape(tshape))
            off += n
        if not shape.log_std_dim:
            self.log_std = None

    @classmethod
    def zeros(cls, shape: MlpShape) -> "MlpParams":
        return cls(shape, np.zeros(shape.n_params))

    def copy(self) -> "MlpParams":
        return MlpParams(self.shape, self.flat.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name, _ in self.shape.tensor_specs()}


def orthogonal_init(rows: int, cols: int, gain: float, rng: RngStream) -> np.ndarray:
    """QR-based (semi-)orthogonal matrix scaled by gain.

    For rows <= cols the rows are orthonormal, so W @ W.T == gain^2 * I.
    """
    if rows < 1 or cols < 1:
        raise ConfigError("orthogonal_init needs rows, cols >= 1")
    big, small = max(rows, cols), min(rows, cols)
    a = rng.gen.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity of QR
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def xavier_uniform_init(fan_in: int, fan_out: int, rng: RngStream) -> np.ndarray:
    """Uniform init on +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ConfigError("xavier_uniform_init needs fans >= 1")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.gen.uniform(-bound, bound, (fan_in, fan_out))


# ---------------------------------------------------------------------------
# Forward / backward

_RELU = "relu"


def _activate_inplace(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == _RELU:
        return np.maximum(z, 0.0, out=z)
    return np.tanh(z, out=z)


def _mask_by_activation_grad(d: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    """In-place multiply of an upstream gradient by the activation derivative."""
    if kind == _RELU:
        return np.multiply(d, h > 0.0, out=d)
    return np.multiply(d, 1.0 - h * h, out=d)


def forward_cached(params: MlpParams, x: np.ndarray):
    """Batched forward pass. Returns (output, cache) with cache = (x, h1, h2)."""
    act = params.shape.activation
    h1 = x @ params.w1
    h1 += params.b1
    _activate_inplace(h1, act)
    h2 = h1 @ params.w2
    h2 += params.b2
    _activate_inplace(h2, act)
    y = h2 @ params.w3
    y += params.b3
    return y, (x, h1, h2)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batched forward pass without keeping intermediates."""
    return forward_cached(params, x)[0]


def backward(
    params: MlpParams,
    cache,
    d_out: np.ndarray,
    grads: MlpParams,
    *,
    want_input_grad: bool = False,
):
    """Reverse pass: writes d(sum of d_out . output)/dparams into `grads`.

    `grads` must be an MlpParams over a writable flat buffer of the same shape.
    Returns the gradient with respect to the input batch when requested.
    """
    x, h1, h2 = cache
    act = params.shape.activation
    np.matmul(h2.T, d_out, out=grads.w3)
    d_out.sum(axis=0, out=grads.b3)
    dh2 = _mask_by_activation_grad(d_out @ params.w3.T, h2, act)
    np.matmul(h1.T, dh2, out=grads.w2)
    dh2.sum(axis=0, out=grads.b2)
    dh1 = _mask_by_activation_grad(dh2 @ params.w2.T, h1, act)
    np.matmul(x.T, dh1, out=grads.w1)
    dh1.sum(axis=0, out=grads.b1)
    if grads.log_std is not None:
        grads.log_std[...] = 0.0
    if want_input_grad:
        return dh1 @ params.w1.T
    return None


def input_gradient(params: MlpParams, cache, d_out: np.ndarray) -> np.ndarray:
    """Gradient of (d_out . output) with respect to the input only (no parameter grads)."""
    _, h1, h2 = cache
    act = params.shape.activation
    dh2 = _mask_by_activation_grad(d_out @ params.w3.T, h2, act)
    dh1 = _mask_by_activation_grad(dh2 @ params.w2.T, h1, act)
    return dh1 @ params.w1.T


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.shape.in_dim,):
        raise ConfigError(
            f"input length {x.shape} does not match first layer ({params.shape.in_dim},)"
        )
    return forward(params, x[None, :])[0]


def mlp_gradient(params: MlpParams, x, upstream) -> MlpParams:
    """Exact gradients of (upstream . output) with respect to every parameter."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != (params.shape.in_dim,):
        raise ConfigError("input length does not match first layer")
    if upstream.shape != (params.shape.out_dim,):
        raise ConfigError("upstream length does not match output layer")
    _, cache = forward_cached(params, x[None, :])
    grads = MlpParams.zeros(params.shape)
    backward(params, cache, upstream[None, :], grads)
    return grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators over one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


if _HAVE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _adam_fused(params, grads, m, v, beta1, beta2, eps, lr_over_bias1, inv_bias2):
        for i in range(params.size):
            g = grads[i]
            mi = beta1 * m[i] + (1.0 - beta1) * g
            vi = beta2 * v[i] + (1.0 - beta2) * (g * g)
            m[i] = mi
            v[i] = vi
            params[i] -= lr_over_bias1 * mi / (np.sqrt(vi * inv_bias2) + eps)

else:  # pragma: no cover - slower but equivalent arithmetic

    def _adam_fused(params, grads, m, v, beta1, beta2, eps, lr_over_bias1, inv_bias2):
        m *= beta1
        m += (1.0 - beta1) * grads
        scratch = grads * grads
        scratch *= 1.0 - beta2
        v *= beta2
        v += scratch
        np.multiply(v, inv_bias2, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += eps
        np.divide(m, scratch, out=scratch)
        scratch *= lr_over_bias1
        params -= scratch


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """One in-place bias-corrected Adam update. Returns (params, state)."""
    if lr < 0.0:
        raise ConfigError("learning rate must be >= 0")
    s = float(grads.sum())
    if not math.isfinite(s) and not np.isfinite(grads).all():
        raise RunAborted("non-finite gradient in Adam update")
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    _adam_fused(params, grads, state.m, state.v, state.beta1, state.beta2, state.eps,
                lr / bias1, 1.0 / bias2)
    return params, state


# ---------------------------------------------------------------------------
# Gaussian policy math


def gaussian_logprob(mean, log_std, action) -> float:
    """Diagonal-Gaussian log density, summed over dimensions."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    z = (action - mean) * np.exp(-log_std)
    return float(np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI))


def gaussian_logprob_batch(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Row-wise diagonal-Gaussian log densities for batched means/actions."""
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def tanh_correction(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) per element, computed in a numerically stable form."""
    # 1 - tanh(u)^2 = 4 e^{-2u} / (1 + e^{-2u})^2
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squash_with_logprob(mean: np.ndarray, log_std: np.ndarray, eps: np.ndarray):
    """tanh-squashed Gaussian sample from given standard-normal noise.

    Returns (action, pre_tanh, log_prob) with the per-dimension
    change-of-variables correction included in log_prob. Batched over rows.
    """
    std = np.exp(log_std)
    u = mean + std * eps
    action = np.tanh(u)
    base = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI, axis=-1)
    logp = base - np.sum(tanh_correction(u), axis=-1)
    return action, u, logp


def squashed_gaussian_sample(mean, log_std, rng: RngStream):
    """Sample a bounded action in (-1, 1)^d with its squash-corrected log-prob."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    if mean.shape != log_std.shape:
        raise ConfigError("mean and log_std lengths differ")
    eps = rng.gen.standard_normal(mean.shape)
    action, _, logp = squash_with_logprob(mean, log_std, eps)
    return action, float(logp)
