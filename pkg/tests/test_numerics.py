import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultadapt.errors import ConfigError, RunAborted
from faultadapt.numerics import (
    AdamState,
    MlpParams,
    MlpShape,
    RngStream,
    adam_step,
    derive_seed,
    forward,
    gaussian_logprob,
    mlp_forward,
    mlp_gradient,
    orthogonal_init,
    squash_with_logprob,
    squashed_gaussian_sample,
    tanh_correction,
    xavier_uniform_init,
)

from gradcheck import assert_grad_matches


def random_params(shape: MlpShape, seed: int, scale: float = 0.5) -> MlpParams:
    params = MlpParams.zeros(shape)
    params.flat[...] = RngStream(seed).gen.standard_normal(shape.n_params) * scale
    return params


# ---------------------------------------------------------------------------
# mlp_forward


def test_forward_zero_weights_annihilate():
    params = MlpParams.zeros(MlpShape(3, 4, 4, 2))
    assert np.array_equal(mlp_forward(params, [1.0, -2.0, 0.5]), np.zeros(2))


def test_forward_identity_chain():
    # relu hidden layers with identity weights pass non-negative inputs through.
    shape = MlpShape(3, 3, 3, 3, activation="relu")
    params = MlpParams.zeros(shape)
    for w in (params.w1, params.w2, params.w3):
        w[...] = np.eye(3)
    x = np.array([0.3, 1.2, 0.0])
    assert np.array_equal(mlp_forward(params, x), x)


def test_forward_two_layer_tanh_chain():
    shape = MlpShape(1, 1, 1, 1, activation="tanh")
    params = MlpParams.zeros(shape)
    params.w1[...] = params.w2[...] = params.w3[...] = 1.0
    # Hand evaluation of the chain: linear head on tanh(tanh(0.5)).
    expected = math.tanh(math.tanh(0.5))
    assert mlp_forward(params, [0.5])[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.43181, abs=1e-5)


def test_forward_shape_mismatch():
    params = MlpParams.zeros(MlpShape(3, 4, 4, 2))
    with pytest.raises(ConfigError):
        mlp_forward(params, [1.0, 2.0])


# ---------------------------------------------------------------------------
# mlp_gradient


def test_gradient_zero_upstream():
    params = random_params(MlpShape(3, 5, 5, 2), seed=1)
    grads = mlp_gradient(params, [0.1, 0.2, 0.3], [0.0, 0.0])
    assert np.array_equal(grads.flat, np.zeros_like(grads.flat))


def test_gradient_outer_product_identity():
    # Identity-passing relu hiddens make the head act like a single linear layer,
    # so the head weight gradient is the outer product of input and upstream.
    shape = MlpShape(3, 3, 3, 2, activation="relu")
    params = MlpParams.zeros(shape)
    params.w1[...] = np.eye(3)
    params.w2[...] = np.eye(3)
    x = np.array([0.5, 1.5, 2.0])
    u = np.array([2.0, -3.0])
    grads = mlp_gradient(params, x, u)
    assert np.allclose(grads.w3, np.outer(x, u))


def test_gradient_matches_finite_differences():
    shape = MlpShape(4, 8, 8, 2, activation="tanh")
    params = random_params(shape, seed=7)
    rng = RngStream(11).gen
    x = rng.standard_normal(4)
    upstream = rng.standard_normal(2)
    analytic = mlp_gradient(params, x, upstream)

    def loss():
        return float(upstream @ mlp_forward(params, x))

    assert_grad_matches(loss, params.flat, analytic.flat, rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------------------
# adam_step


def test_adam_zero_gradient_leaves_params():
    # From zero moments a zero gradient never moves the parameters; with live
    # moments standard Adam still decays them toward zero.
    params = RngStream(3).gen.standard_normal(10)
    before = params.copy()
    adam_step(params, np.zeros(10), AdamState.zeros(10), lr=0.01)
    assert np.array_equal(params, before)

    state = AdamState.zeros(10)
    state.m[...] = 0.5
    state.v[...] = 0.25
    adam_step(params, np.zeros(10), state, lr=0.01)
    assert np.all(state.m < 0.5) and np.all(state.v < 0.25)


def test_adam_first_step_hand_derivation():
    params = np.zeros(1)
    state = AdamState.zeros(1)
    adam_step(params, np.ones(1), state, lr=0.001)
    expected = -0.001 / (1.0 + 1e-8)  # bias correction cancels on step one
    assert params[0] == pytest.approx(expected, abs=1e-12)
    assert state.t == 1


def test_adam_deterministic_from_same_state():
    rng = RngStream(5).gen
    grads = rng.standard_normal(8)
    p1 = rng.standard_normal(8)
    p2 = p1.copy()
    s1 = AdamState(m=rng.standard_normal(8) * 0.1, v=np.abs(rng.standard_normal(8)), t=3)
    s2 = s1.copy()
    adam_step(p1, grads, s1, lr=0.01)
    adam_step(p2, grads, s2, lr=0.01)
    assert np.array_equal(p1, p2) and np.array_equal(s1.m, s2.m) and np.array_equal(s1.v, s2.v)


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(RunAborted):
        adam_step(np.zeros(3), np.array([1.0, np.nan, 0.0]), AdamState.zeros(3), lr=0.1)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_adam_zero_grad_invariance(seed):
    # Any number of zero-gradient steps from a fresh optimizer is a no-op.
    params = RngStream(seed).gen.standard_normal(6)
    before = params.copy()
    state = AdamState.zeros(6)
    for _ in range(1 + seed % 4):
        adam_step(params, np.zeros(6), state, lr=0.37)
    assert np.array_equal(params, before)


# ---------------------------------------------------------------------------
# initializers


@pytest.mark.parametrize("rows,cols", [(4, 4), (8, 8), (3, 7)])
def test_orthogonal_rows(rows, cols):
    w = orthogonal_init(rows, cols, gain=1.3, rng=RngStream(2))
    assert w.shape == (rows, cols)
    assert np.allclose(w @ w.T, 1.69 * np.eye(rows), atol=1e-9)


def test_orthogonal_zero_gain():
    assert np.array_equal(orthogonal_init(5, 5, 0.0, RngStream(2)), np.zeros((5, 5)))


def test_orthogonal_deterministic():
    a = orthogonal_init(6, 6, 1.0, RngStream(99))
    b = orthogonal_init(6, 6, 1.0, RngStream(99))
    assert np.array_equal(a, b)


def test_xavier_bound_and_determinism():
    bound = math.sqrt(6.0 / 6.0)
    assert bound == 1.0
    a = xavier_uniform_init(3, 3, RngStream(4))
    b = xavier_uniform_init(3, 3, RngStream(4))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0)
    big = xavier_uniform_init(30, 50, RngStream(5))
    assert np.all(np.abs(big) <= math.sqrt(6.0 / 80.0))


# ---------------------------------------------------------------------------
# Gaussian policy math


def test_logprob_standard_normal_at_mode():
    assert gaussian_logprob([0.0], [0.0], [0.0]) == pytest.approx(-0.9189385332046727, abs=1e-12)


def test_logprob_at_mode_general():
    log_std = np.array([0.3, -0.7, 1.1])
    mean = np.array([1.0, -2.0, 0.5])
    expected = -float(log_std.sum()) - 1.5 * math.log(2 * math.pi)
    assert gaussian_logprob(mean, log_std, mean) == pytest.approx(expected, abs=1e-12)


def test_logprob_unit_offset():
    assert gaussian_logprob([0.0], [0.0], [1.0]) == pytest.approx(-1.4189385332046727, abs=1e-12)


def test_squash_deterministic_limit():
    mean = np.array([0.7, -0.4])
    action, _ = squashed_gaussian_sample(mean, np.full(2, -20.0), RngStream(8))
    assert np.allclose(action, np.tanh(mean), atol=1e-7)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_squash_range_invariant(seed):
    rng = RngStream(seed)
    mean = rng.gen.standard_normal(3) * 3.0
    log_std = rng.gen.uniform(-3.0, 1.5, 3)
    action, logp = squashed_gaussian_sample(mean, log_std, rng)
    assert np.all(np.abs(action) < 1.0)
    assert math.isfinite(logp)


def test_squash_correction_matches_numeric_jacobian():
    u = 0.3
    h = 1e-6
    jac = (math.tanh(u + h) - math.tanh(u - h)) / (2 * h)
    assert tanh_correction(np.array(u)) == pytest.approx(math.log(jac), abs=1e-9)
    assert tanh_correction(np.array(u)) == pytest.approx(math.log(1 - math.tanh(u) ** 2), abs=1e-12)


def test_squash_logprob_consistency():
    # log-prob equals base Gaussian density at the pre-tanh point minus the correction
    rng = RngStream(21)
    mean = np.array([0.2, -0.5])
    log_std = np.array([-0.3, 0.1])
    eps = rng.gen.standard_normal(2)
    action, u, logp = squash_with_logprob(mean, log_std, eps)
    expected = gaussian_logprob(mean, log_std, u) - float(tanh_correction(u).sum())
    assert logp == pytest.approx(expected, abs=1e-10)


# ---------------------------------------------------------------------------
# module-level invariants


@pytest.mark.parametrize("shape", [
    MlpShape(13, 64, 64, 8, "tanh", log_std_dim=8),
    MlpShape(10, 256, 256, 1, "relu"),
])
def test_gradient_fidelity_production_architectures(shape):
    rng = np.random.default_rng(123)
    for trial in range(5):
        params = random_params(shape, seed=1000 + trial, scale=0.3)
        x = RngStream(trial).gen.standard_normal(shape.in_dim)
        upstream = RngStream(trial + 50).gen.standard_normal(shape.out_dim)
        analytic = mlp_gradient(params, x, upstream)

        def loss():
            return float(upstream @ mlp_forward(params, x))

        idx = rng.choice(shape.n_params, size=12, replace=False)
        assert_grad_matches(loss, params.flat, analytic.flat, indices=idx)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_rng_determinism(seed):
    a = RngStream(seed).gen.standard_normal(16)
    b = RngStream(seed).gen.standard_normal(16)
    assert np.array_equal(a, b)


def test_derive_seed_order_sensitive():
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert derive_seed(7, 8, 9) == derive_seed(7, 8, 9)


def test_params_views_share_flat():
    shape = MlpShape(3, 4, 4, 2, log_std_dim=2)
    params = MlpParams.zeros(shape)
    params.flat[...] = 1.0
    assert np.all(params.w1 == 1.0) and np.all(params.log_std == 1.0)
    params.w2[0, 0] = 5.0
    assert 5.0 in params.flat
