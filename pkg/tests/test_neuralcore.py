import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfcombat.errors import ProtocolError, ShapeError
from lfcombat.neuralcore import (
    LOG_2PI, AdamState, Mlp, adam_update, categorical_head_sample, categorical_mode, clip_by_global_norm, entropy,
    gaussian_entropy, gaussian_head_sample, gaussian_log_prob, init_mlp, log_softmax, mlp_backward, mlp_forward,
    softmax, squashed_log_prob, tanh_log_det,
)


def scalar_loss(net, x, u):
    y, _ = mlp_forward(net, x)
    return float(np.sum(u * y))


def fd_check(net, x, u, h=1e-5):
    """Max relative error between backward and central differences over all parameters."""
    _, cache = mlp_forward(net, x)
    grads = mlp_backward(net, cache, u)
    worst = 0.0
    for p, g in zip(net.tensors(), grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = scalar_loss(net, x, u)
            p[i] = old - h
            fm = scalar_loss(net, x, u)
            p[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(1e-6, abs(num) + abs(g[i])))
    return worst


def kink_free(net, x, margin=1e-3):
    _, cache = mlp_forward(net, x)
    return all(np.min(np.abs(z)) > margin for z in cache.pre)


# ---------------------------------------------------------------- forward / backward

def test_identity_net_passes_positive_input():
    net = Mlp([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
    x = np.array([0.5, 1.0, 2.0])
    np.testing.assert_array_equal(mlp_forward(net, x)[0], x)


def test_zero_weights_output_final_bias():
    b = np.array([0.3, -2.0])
    net = Mlp([np.zeros((4, 5)), np.zeros((5, 2))], [np.ones(5), b])
    np.testing.assert_array_equal(mlp_forward(net, np.ones(4))[0], b)


def test_shape_mismatch_rejected():
    net = init_mlp([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        mlp_forward(net, np.ones(5))
    with pytest.raises(ShapeError):
        Mlp([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])


def test_zero_upstream_gives_zero_gradients():
    net = init_mlp([3, 8, 2], np.random.default_rng(1))
    _, cache = mlp_forward(net, np.ones(3))
    assert all(np.all(g == 0) for g in mlp_backward(net, cache, np.zeros(2)))


def test_single_linear_layer_gradient_is_outer_product():
    rng = np.random.default_rng(2)
    net = Mlp([rng.standard_normal((4, 3))], [np.zeros(3)])
    x, u = rng.standard_normal(4), rng.standard_normal(3)
    _, cache = mlp_forward(net, x)
    dw, db = mlp_backward(net, cache, u)
    np.testing.assert_allclose(dw, np.outer(x, u))
    np.testing.assert_allclose(db, u)


def test_stale_cache_rejected():
    net = init_mlp([3, 4, 2], np.random.default_rng(0))
    _, cache = mlp_forward(net, np.ones(3))
    adam_update(net, [np.ones_like(p) for p in net.tensors()], AdamState.zeros_like(net.tensors()))
    with pytest.raises(ProtocolError):
        mlp_backward(net, cache, np.ones(2))
    other = net.copy()
    _, cache = mlp_forward(net, np.ones(3))
    with pytest.raises(ProtocolError):
        mlp_backward(other, cache, np.ones(2))


def test_gradients_match_finite_differences_on_50_nets():
    rng = np.random.default_rng(1234)
    checked = 0
    while checked < 50:
        sizes = [int(rng.integers(2, 6)), int(rng.integers(3, 8)), int(rng.integers(1, 4))]
        if rng.random() < 0.5:
            sizes.insert(2, int(rng.integers(3, 7)))
        net = init_mlp(sizes, rng)
        for b in net.biases:
            b[:] = rng.standard_normal(b.shape) * 0.1
        x = rng.standard_normal(sizes[0])
        if not kink_free(net, x):
            continue
        u = rng.standard_normal(sizes[-1])
        assert fd_check(net, x, u) < 1e-3
        checked += 1


def test_batched_gradient_is_sum_of_per_sample_gradients():
    rng = np.random.default_rng(5)
    net = init_mlp([3, 6, 2], rng)
    X, U = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    _, cache = mlp_forward(net, X)
    batched = mlp_backward(net, cache, U)
    total = [np.zeros_like(p) for p in net.tensors()]
    for x, u in zip(X, U):
        _, c = mlp_forward(net, x)
        total = [t + g for t, g in zip(total, mlp_backward(net, c, u))]
    for a, b in zip(batched, total):
        np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------- Adam

def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -7.0, 1e-3])]
    before = p[0].copy()
    adam_update(p, g, AdamState.zeros_like(p), lr=1e-2)
    np.testing.assert_allclose(p[0] - before, -1e-2 * np.sign(g[0]), atol=1e-6)


def test_adam_zero_gradient_leaves_parameters():
    p = [np.array([1.0, 2.0])]
    adam_update(p, [np.zeros(2)], AdamState.zeros_like(p), lr=0.1)
    np.testing.assert_array_equal(p[0], [1.0, 2.0])


def test_adam_descends_quadratic():
    w = [np.array([1.0])]
    st_ = AdamState.zeros_like(w)
    for _ in range(100):
        adam_update(w, [2.0 * w[0]], st_, lr=0.1)
    assert abs(w[0][0]) < 0.1


def test_adam_skips_non_finite_gradient():
    p = [np.array([1.0])]
    s = AdamState.zeros_like(p)
    adam_update(p, [np.array([np.nan])], s)
    assert p[0][0] == 1.0 and s.skipped == 1 and s.t == 0
    assert np.all(s.m[0] == 0) and np.all(s.v[0] == 0)


def test_adam_moments_start_at_zero_and_mirror_shapes():
    net = init_mlp([3, 5, 2], np.random.default_rng(0), log_std=0.0)
    s = AdamState.zeros_like(net.tensors())
    assert [m.shape for m in s.m] == [p.shape for p in net.tensors()]
    assert all(np.all(m == 0) for m in s.m + s.v)


def test_adam_trajectories_bit_identical():
    def run():
        rng = np.random.default_rng(9)
        net = init_mlp([4, 8, 2], rng)
        s = AdamState.zeros_like(net.tensors())
        for _ in range(20):
            x = rng.standard_normal((5, 4))
            _, c = mlp_forward(net, x)
            adam_update(net, mlp_backward(net, c, rng.standard_normal((5, 2))), s)
        return np.concatenate([p.ravel() for p in net.tensors()])
    assert run().tobytes() == run().tobytes()


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([c[0] for c in clipped], [0.6, 0.8])
    same, _ = clip_by_global_norm(g, 10.0)
    assert same[0][0] == 3.0


# ---------------------------------------------------------------- Gaussian head

def test_degenerate_gaussian_returns_mean():
    mean = np.array([0.3, -1.2, 4.0])
    x, _ = gaussian_head_sample(mean, np.full(3, -20.0), np.random.default_rng(0))
    np.testing.assert_allclose(x, mean, atol=1e-6)


def test_gaussian_log_prob_at_mean():
    for k in (1, 3, 5):
        assert math.isclose(float(gaussian_log_prob(np.zeros(k), np.zeros(k), np.zeros(k))), -0.5 * k * LOG_2PI)


def test_gaussian_sample_mean_monte_carlo():
    rng = np.random.default_rng(11)
    mean, log_std = np.array([1.0, -0.5]), np.array([0.0, -1.0])
    xs = np.array([gaussian_head_sample(mean, log_std, rng)[0] for _ in range(100_000)])
    tol = 3 * np.exp(log_std) / math.sqrt(len(xs))
    assert np.all(np.abs(xs.mean(axis=0) - mean) < tol)


def test_gaussian_entropy_closed_form():
    assert math.isclose(gaussian_entropy(np.zeros(3)), 1.5 * (1 + LOG_2PI))


def test_tanh_log_det_matches_direct_formula():
    x = np.linspace(-5, 5, 41)
    direct = np.log(1 - np.tanh(x) ** 2)
    np.testing.assert_allclose([tanh_log_det(np.array([v])) for v in x], direct, atol=1e-9)
    assert np.isfinite(tanh_log_det(np.array([50.0])))


def test_squashed_density_integrates_to_one():
    # density of y = tanh(x) on (-1, 1), one dimension
    y = np.linspace(-1 + 1e-9, 1 - 1e-9, 400_001)
    x = np.arctanh(y)
    lp = np.array([squashed_log_prob(np.array([v]), np.array([0.4]), np.array([-0.3])) for v in x[::100]])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    total = trapezoid(np.exp(lp), y[::100])
    assert abs(total - 1.0) < 1e-3


# ---------------------------------------------------------------- categorical head

def test_uniform_entropy_is_log_k():
    assert math.isclose(float(entropy(np.zeros(3))), math.log(3))


def test_near_deterministic_logits():
    assert float(entropy(np.array([1000.0, 0.0, 0.0]))) < 1e-12
    rng = np.random.default_rng(0)
    assert all(categorical_head_sample(np.array([1000.0, 0.0, 0.0]), rng)[0] == 0 for _ in range(1000))


def test_categorical_frequency_monte_carlo():
    rng = np.random.default_rng(3)
    n = 100_000
    hits = sum(categorical_head_sample(np.array([1.0, 0.0]), rng)[0] == 0 for _ in range(n))
    assert abs(hits / n - math.e / (math.e + 1)) < 0.01


def test_infinite_logits_are_hard_choices():
    logits = np.array([np.inf, -np.inf, -np.inf])
    assert categorical_mode(logits)[0] == 0
    assert categorical_head_sample(logits, np.random.default_rng(0))[0] == 0


def test_single_logit_rejected():
    with pytest.raises(ShapeError):
        categorical_head_sample(np.array([1.0]), np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_categorical_probabilities_and_entropy_bounds(logits):
    z = np.array(logits)
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    assert abs(np.exp(log_softmax(z)).sum() - 1.0) < 1e-12
    h = float(entropy(z))
    assert -1e-12 <= h <= math.log(len(z)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_outputs_finite(seed):
    rng = np.random.default_rng(seed)
    net = init_mlp([5, 16, 16, 3], rng)
    y, _ = mlp_forward(net, rng.standard_normal((4, 5)) * 100)
    assert y.shape == (4, 3) and np.all(np.isfinite(y))
