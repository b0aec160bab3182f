import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dietcl.errors import ContractError, InputError, ShapeError
from dietcl.nn import (Mlp, OptimizerState, SgdConfig, backward, cross_entropy, embed, entropy,
                       expand_head, forward, input_saliency, kd_loss, sgd_step, softmax)
from oracles import fd_gradient, loop_forward, max_rel_error


def net_with(weights, biases, rectify_output=False):
    net = Mlp([weights[0].shape[1]] + [w.shape[0] for w in weights], rectify_output=rectify_output)
    net.load_parameters({**{f"W{i}": w for i, w in enumerate(weights)},
                         **{f"b{i}": b for i, b in enumerate(biases)}})
    return net


# ---------------------------------------------------------------- forward

def test_zero_weight_net_gives_zero_logits():
    net = Mlp([5, 4, 3])
    for w in net.weights:
        w[:] = 0
    out, _ = forward(net, np.random.default_rng(0).normal(size=(6, 5)))
    assert np.array_equal(out, np.zeros((6, 3)))


def test_single_layer_is_affine():
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    x = rng.normal(size=(7, 4))
    out, _ = forward(net_with([w], [b]), x)
    np.testing.assert_allclose(out, x @ w.T + b, rtol=0, atol=1e-13)


def test_forward_matches_scalar_loop_oracle():
    rng = np.random.default_rng(2)
    net = Mlp([6, 5, 3], rng=rng)
    net.biases[0][:] = rng.normal(size=5)
    x = rng.normal(size=(4, 6))
    out, _ = forward(net, x)
    np.testing.assert_allclose(out, loop_forward(net.weights, net.biases, x), rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        forward(Mlp([4, 3]), np.zeros((2, 5)))


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_and_overflow():
    np.testing.assert_allclose(softmax([[0, 0, 0, 0]]), [[0.25] * 4], atol=1e-15)
    p = softmax([[1000.0, 0.0]])
    assert np.isfinite(p).all() and p[0, 0] == pytest.approx(1.0) and p[0, 1] < 1e-300


def test_softmax_matches_extended_precision():
    rng = np.random.default_rng(3)
    mpmath.mp.dps = 50
    for _ in range(20):
        row = rng.normal(scale=5, size=6)
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
        total = mpmath.fsum(exps)
        ref = np.array([float(e / total) for e in exps])
        np.testing.assert_allclose(softmax(row)[0], ref, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 8)),
                  elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(z, c):
    p = softmax(z)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-9)


# ---------------------------------------------------------------- losses

def test_cross_entropy_limits():
    loss, _ = cross_entropy([[50.0, 0, 0]], [0])
    assert loss < 1e-20
    loss, _ = cross_entropy(np.zeros((3, 4)), [0, 1, 2])
    assert loss == pytest.approx(math.log(4), abs=1e-15)


def test_cross_entropy_gradient_fd():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, size=5)
    _, g = cross_entropy(z, y)
    num = fd_gradient(lambda: cross_entropy(z, y)[0], z)
    assert max_rel_error(g, num) < 1e-4
    onehot = np.eye(4)[y]
    np.testing.assert_allclose(g, (softmax(z) - onehot) / 5, atol=1e-15)


def test_cross_entropy_label_range():
    with pytest.raises(InputError):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(InputError):
        cross_entropy(np.zeros((2, 3)), [-1, 0])


def test_kd_identical_is_zero_and_flat_at_high_temperature():
    z = np.random.default_rng(5).normal(size=(4, 3))
    assert kd_loss(z, z, 2.0)[0] == 0.0
    teacher = np.array([[30.0, 0.0, 0.0]])
    student = np.zeros((1, 3))
    # the KL itself vanishes as both distributions flatten ...
    kl = [kd_loss(student, teacher, T)[0] / T**2 for T in (10.0, 100.0, 1e4)]
    assert kl[0] > kl[1] > kl[2] and kl[2] < 1e-5
    # ... while T^2 * KL tends to half the variance of the logit gap under the uniform law
    gap = teacher[0] - student[0]
    limit = 0.5 * np.var(gap)
    assert kd_loss(student, teacher, 1e4)[0] == pytest.approx(limit, rel=1e-3)


def test_kd_gradient_fd():
    rng = np.random.default_rng(6)
    s, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    _, g = kd_loss(s, t, 2.0)
    num = fd_gradient(lambda: kd_loss(s, t, 2.0)[0], s)
    assert max_rel_error(g, num) < 1e-4


def test_kd_shape_mismatch():
    with pytest.raises(ShapeError):
        kd_loss(np.zeros((2, 3)), np.zeros((2, 4)), 1.0)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, (3, 4), elements=st.floats(-20, 20)),
       hnp.arrays(float, (3, 4), elements=st.floats(-20, 20)),
       st.floats(0.1, 10))
def test_kd_nonnegative_and_zero_on_self(s, t, temp):
    assert kd_loss(s, t, temp)[0] >= 0
    assert kd_loss(s, s, temp)[0] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- backward

def test_zero_upstream_gives_zero_gradients():
    net = Mlp([4, 6, 3], rng=np.random.default_rng(7))
    out, cache = forward(net, np.ones((2, 4)))
    grads = backward(net, cache, np.zeros_like(out))
    assert all(not g.any() for g in grads.values())
    assert {k: g.shape for k, g in grads.items()} == {k: p.shape for k, p in net.named_parameters().items()}


def test_relu_kink_uses_zero_subgradient():
    # pre-activation exactly 0: backward passes nothing through, the one-sided
    # slopes are 0 (left) and 1 (right), and central differences average them.
    net = net_with([np.array([[1.0]]), np.array([[2.0]])], [np.zeros(1), np.zeros(1)])
    out, cache = forward(net, np.zeros((1, 1)))
    grads = backward(net, cache, np.ones_like(out))
    assert grads["b0"][0] == 0.0
    fd = fd_gradient(lambda: float(forward(net, np.zeros((1, 1)))[0].sum()), net.named_parameters()["b0"])
    assert fd[0] == pytest.approx(1.0)


def test_linear_weight_gradient_is_outer_product():
    rng = np.random.default_rng(8)
    net = Mlp([4, 3], rng=rng)
    x, up = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
    _, cache = forward(net, x)
    grads = backward(net, cache, up)
    np.testing.assert_allclose(grads["W0"], up.T @ x, atol=1e-13)
    np.testing.assert_allclose(grads["b0"], up.sum(axis=0), atol=1e-13)


def test_stale_cache_is_rejected():
    net = Mlp([3, 4, 2])
    out, cache = forward(net, np.ones((1, 3)))
    sgd_step(net, backward(net, cache, np.ones_like(out)), SgdConfig(), OptimizerState())
    with pytest.raises(ContractError):
        backward(net, cache, np.ones_like(out))
    with pytest.raises(ContractError):
        backward(Mlp([3, 4, 2]), cache, np.ones_like(out))


def test_backward_fd_small_deep_net():
    rng = np.random.default_rng(9)
    net = Mlp([5, 7, 6, 3], rng=rng)
    x, y = rng.normal(size=(6, 5)), rng.integers(0, 3, size=6)

    def loss():
        return cross_entropy(forward(net, x)[0], y)[0]

    out, cache = forward(net, x)
    grads = backward(net, cache, cross_entropy(out, y)[1])
    for name, p in net.named_parameters().items():
        assert max_rel_error(grads[name], fd_gradient(loss, p)) < 1e-4, name


# ---------------------------------------------------------------- embed

def test_embed_zero_input_zero_bias():
    assert not embed(Mlp([4, 5, 2]), np.zeros((3, 4))).any()


def test_embed_batching_invariance_and_loop_oracle():
    rng = np.random.default_rng(10)
    net = Mlp([4, 6, 5, 2], rng=rng)
    net.biases[1][:] = rng.normal(size=5)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    np.testing.assert_array_equal(embed(net, np.vstack([a, b])), np.vstack([embed(net, a), embed(net, b)]))
    ref = loop_forward(net.weights, net.biases, a, hidden_only=True)
    np.testing.assert_allclose(embed(net, a), ref, atol=1e-12)


def test_embed_needs_hidden_layer():
    with pytest.raises(ContractError):
        embed(Mlp([3, 2]), np.zeros((1, 3)))


# ---------------------------------------------------------------- entropy

def test_entropy_reference_rows():
    h = entropy([[1, 0, 0, 0], [0.25] * 4, [0.5, 0.5, 0, 0]])
    np.testing.assert_allclose(h, [0.0, math.log(4), math.log(2)], atol=1e-15)


def test_entropy_rejects_non_distributions():
    with pytest.raises(InputError):
        entropy([[0.5, 0.4]])
    with pytest.raises(InputError):
        entropy([[1.5, -0.5]])


# ---------------------------------------------------------------- saliency

def test_saliency_linear_net_is_weight_row():
    rng = np.random.default_rng(11)
    net = Mlp([5, 3], rng=rng)
    np.testing.assert_allclose(input_saliency(net, rng.normal(size=5), 2), np.abs(net.weights[0][2]), atol=1e-15)


def test_saliency_matches_fd_on_input():
    rng = np.random.default_rng(12)
    net = Mlp([6, 8, 4], rng=rng)
    x = rng.normal(size=(1, 6))
    num = fd_gradient(lambda: forward(net, x)[0][0, 1], x)[0]
    assert max_rel_error(input_saliency(net, x[0], 1), np.abs(num)) < 1e-3


def test_saliency_dead_rectifiers_give_zero():
    net = Mlp([3, 4, 2])
    net.biases[0][:] = -100.0
    assert not input_saliency(net, np.ones(3), 0).any()


# ---------------------------------------------------------------- expand_head

def test_expand_head_rules():
    rng = np.random.default_rng(13)
    net = Mlp([4, 5, 2], rng=rng)
    with pytest.raises(InputError):
        expand_head(net, 0, rng)
    x = rng.normal(size=(6, 4))
    before = forward(net, x)[0]
    old_rows = net.weights[-1].copy()
    expand_head(net, 1, rng)
    expand_head(net, 1, rng)
    assert net.output_dim == 4 and net.layer_dims == [4, 5, 4]
    assert np.array_equal(net.weights[-1][:2], old_rows)
    assert np.array_equal(forward(net, x)[0][:, :2], before)
    assert not net.biases[-1][2:].any()
    limit = math.sqrt(6 / (5 + 4))
    assert np.abs(net.weights[-1][3]).max() <= limit


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_expand_head_preserves_old_logits(seed, k):
    rng = np.random.default_rng(seed)
    net = Mlp([3, 4, 2], rng=rng)
    x = rng.normal(size=(5, 3))
    before = forward(net, x)[0]
    expand_head(net, k, rng)
    assert np.array_equal(forward(net, x)[0][:, :2], before)


# ---------------------------------------------------------------- sgd

def test_sgd_plain_and_identity_cases():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.5])}
    sgd_step(p, g, SgdConfig(learning_rate=0.1, momentum=0.0), OptimizerState())
    np.testing.assert_allclose(p["w"], [0.95, -2.05], atol=1e-15)
    before = p["w"].copy()
    sgd_step(p, {"w": np.zeros(2)}, SgdConfig(momentum=0.9), OptimizerState())
    assert np.array_equal(p["w"], before)


def test_sgd_two_momentum_steps_match_unrolled_recurrence():
    lr, mu, wd = 0.1, 0.9, 0.0
    theta0 = np.array([0.3, -0.7])
    g = np.array([1.0, 2.0])
    p = {"w": theta0.copy()}
    state = OptimizerState()
    cfg = SgdConfig(learning_rate=lr, momentum=mu, weight_decay=wd)
    sgd_step(p, {"w": g}, cfg, state)
    sgd_step(p, {"w": g}, cfg, state)
    # v1 = g, v2 = mu g + g; theta2 = theta0 - lr (2 + mu) g
    np.testing.assert_allclose(p["w"], theta0 - lr * (2 + mu) * g, atol=1e-15)


def test_sgd_weight_decay_enters_velocity():
    p = {"w": np.array([2.0])}
    cfg = SgdConfig(learning_rate=0.5, momentum=0.0, weight_decay=0.1)
    sgd_step(p, {"w": np.array([0.0])}, cfg, OptimizerState())
    assert p["w"][0] == pytest.approx(2.0 - 0.5 * 0.2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_sgd_zero_lr_is_identity(seed):
    rng = np.random.default_rng(seed)
    net = Mlp([3, 4, 2], rng=rng)
    before = {k: v.copy() for k, v in net.named_parameters().items()}
    out, cache = forward(net, rng.normal(size=(4, 3)))
    grads = backward(net, cache, rng.normal(size=out.shape))
    sgd_step(net, grads, SgdConfig(weight_decay=0.01), OptimizerState(), learning_rate=0.0)
    for k, v in net.named_parameters().items():
        assert np.array_equal(v, before[k])


def test_sgd_config_validation():
    for bad in (dict(learning_rate=0), dict(momentum=1.0), dict(weight_decay=-1), dict(batch_size=0),
                dict(schedule="cosine")):
        with pytest.raises(InputError):
            SgdConfig(**bad)
