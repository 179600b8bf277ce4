"""Network layer and model tests.

Layer oracles are brute-force loop implementations written here,
independently of the vectorized code under test. Gradients are verified
against central finite differences in 64-bit mode.
"""

import numpy as np
import pytest

from gridsignal.net.model import PROB_EPS, ParamStore, PolicyValueNet
from gridsignal.net.ops import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sigmoid,
)
from gridsignal.net.optim import Adam, NonFiniteGradientError, sgd_step


# ---------------------------------------------------------------------------
# reference implementations (slow, obviously-correct loops)


def ref_conv2d(x, w, b):
    n, h, ww, cin = x.shape
    kh, kw, _, cout = w.shape
    out = np.zeros((n, h - kh + 1, ww - kw + 1, cout), dtype=x.dtype)
    for bi in range(n):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = x[bi, i : i + kh, j : j + kw, :]
                for co in range(cout):
                    out[bi, i, j, co] = np.sum(patch * w[:, :, :, co]) + b[co]
    return out


def ref_maxpool(x, ph, pw):
    n, h, w, c = x.shape
    h2, w2 = h // ph, w // pw
    out = np.zeros((n, h2, w2, c), dtype=x.dtype)
    for bi in range(n):
        for i in range(h2):
            for j in range(w2):
                for ci in range(c):
                    out[bi, i, j, ci] = x[
                        bi, i * ph : (i + 1) * ph, j * pw : (j + 1) * pw, ci
                    ].max()
    return out


# ---------------------------------------------------------------------------
# forward oracles


def test_conv2d_matches_reference():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 8, 9, 3))
    w = rng.normal(size=(5, 5, 3, 4))
    b = rng.normal(size=4)
    y, _ = conv2d_forward(x, w, b)
    assert y.shape == (2, 4, 5, 4)
    np.testing.assert_allclose(y, ref_conv2d(x, w, b), rtol=1e-12, atol=1e-12)


def test_maxpool_matches_reference_and_crops_odd_edges():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 9, 23, 3))  # odd extents exercise floor cropping
    y, _ = maxpool_forward(x, 2, 2)
    assert y.shape == (2, 4, 11, 3)
    np.testing.assert_allclose(y, ref_maxpool(x, 2, 2), rtol=0, atol=0)


def test_maxpool_backward_ties_go_to_first_position():
    # Identical values in a window: only the first (row-major) gets gradient,
    # matching what a finite difference of the max would report.
    x = np.zeros((1, 2, 2, 1))
    y, cache = maxpool_forward(x, 2, 2)
    dx = maxpool_backward(np.ones_like(y), cache)
    assert dx[0, 0, 0, 0] == 1.0
    assert dx.sum() == 1.0


def test_dense_forward_and_backward_shapes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 7))
    w = rng.normal(size=(7, 3))
    b = rng.normal(size=3)
    y, cache = dense_forward(x, w, b)
    np.testing.assert_allclose(y, x @ w + b, rtol=1e-12)
    dy = rng.normal(size=y.shape)
    dx, dw, db = dense_backward(dy, cache)
    np.testing.assert_allclose(dx, dy @ w.T, rtol=1e-12)
    np.testing.assert_allclose(dw, x.T @ dy, rtol=1e-12)
    np.testing.assert_allclose(db, dy.sum(axis=0), rtol=1e-12)


def test_sigmoid_is_stable_at_extremes():
    z = np.array([-1000.0, -10.0, 0.0, 10.0, 1000.0])
    p = sigmoid(z)
    assert np.isfinite(p).all()
    assert p[2] == 0.5
    assert 0.0 <= p[0] < 1e-12 and 1.0 - 1e-12 < p[4] <= 1.0


# ---------------------------------------------------------------------------
# finite-difference gradient checks for each op


def _fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        dn = f()
        flat[k] = orig
        gf[k] = (up - dn) / (2 * h)
    return g


def test_conv2d_backward_matches_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 6, 7, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    dy = rng.normal(size=(2, 4, 5, 3))

    def loss():
        y, _ = conv2d_forward(x, w, b)
        return float((y * dy).sum())

    _, cache = conv2d_forward(x, w, b)
    dx, dw, db = conv2d_backward(dy, cache)
    np.testing.assert_allclose(dx, _fd_grad(loss, x), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(dw, _fd_grad(loss, w), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(db, _fd_grad(loss, b), rtol=1e-5, atol=1e-7)


def test_maxpool_backward_matches_fd():
    rng = np.random.default_rng(4)
    # Distinct values avoid FD ambiguity at exact ties.
    x = rng.permutation(60).astype(np.float64).reshape(1, 5, 6, 2)
    dy = rng.normal(size=(1, 2, 3, 2))

    def loss():
        y, _ = maxpool_forward(x, 2, 2)
        return float((y * dy).sum())

    _, cache = maxpool_forward(x, 2, 2)
    dx = maxpool_backward(dy, cache)
    np.testing.assert_allclose(dx, _fd_grad(loss, x), rtol=1e-5, atol=1e-7)


def test_relu_backward_matches_fd_away_from_kink():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep FD away from the nondifferentiable point
    dy = rng.normal(size=(3, 4))

    def loss():
        y, _ = relu_forward(x)
        return float((y * dy).sum())

    _, cache = relu_forward(x)
    dx = relu_backward(dy, cache)
    np.testing.assert_allclose(dx, _fd_grad(loss, x), rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------------------
# model


def test_feature_shapes_full_scale():
    net = PolicyValueNet(n_intersections=1, lane_cells=100)
    # 24x100 -> conv 5x5 -> 20x96 -> pool 1x2 -> 20x48 -> conv 3x3 -> 18x46
    # -> pool 2x2 -> 9x23 -> 9*23*64 flat features
    assert net.conv_out_shape == (9, 23, 64)
    assert net.flat_features == 9 * 23 * 64


def test_zero_params_give_half_probs_zero_value():
    net = PolicyValueNet(n_intersections=2, lane_cells=40)
    params = net.init_params(np.random.default_rng(0))
    for name in params.names:
        params.arrays[name][:] = 0.0
    x = np.zeros((3, 2, 24, 40))
    h = np.zeros((3, 2, 4))
    probs, value, _ = net.forward(params, x, h)
    assert probs.shape == (3, 2) and value.shape == (3,)
    np.testing.assert_allclose(probs, 0.5)
    np.testing.assert_allclose(value, 0.0)


def test_probs_clamped_inside_open_interval():
    net = PolicyValueNet(n_intersections=1, lane_cells=20)
    params = net.init_params(np.random.default_rng(1))
    params.arrays["out_b"][:] = 100.0  # saturate the sigmoid
    x = np.zeros((2, 1, 24, 20))
    h = np.zeros((2, 1, 4))
    probs, _, _ = net.forward(params, x, h)
    assert (probs <= 1.0 - PROB_EPS).all()
    params.arrays["out_b"][:] = -100.0
    probs, _, _ = net.forward(params, x, h)
    assert (probs >= PROB_EPS).all()


def test_init_is_seed_deterministic_and_biases_zero():
    net = PolicyValueNet(n_intersections=1, lane_cells=30)
    p1 = net.init_params(np.random.default_rng(7))
    p2 = net.init_params(np.random.default_rng(7))
    p3 = net.init_params(np.random.default_rng(8))
    for name in p1.names:
        assert np.array_equal(p1.arrays[name], p2.arrays[name])
        if name.endswith("_b"):
            assert not p1.arrays[name].any()
    assert any(
        not np.array_equal(p1.arrays[n], p3.arrays[n]) for n in p1.names
    )


def test_param_store_copy_is_deep():
    net = PolicyValueNet(n_intersections=1, lane_cells=20)
    params = net.init_params(np.random.default_rng(0))
    clone = params.copy()
    clone.arrays["fc_w"][0, 0] += 1.0
    assert params.arrays["fc_w"][0, 0] != clone.arrays["fc_w"][0, 0]


def test_model_gradients_match_finite_differences():
    rng = np.random.default_rng(42)
    net = PolicyValueNet(n_intersections=2, lane_cells=20, dtype=np.float64)
    params = net.init_params(rng)
    x = (rng.random((3, 2, 24, 20)) < 0.2).astype(np.float64)
    h = np.zeros((3, 2, 4))
    h[np.arange(3)[:, None], np.arange(2)[None, :], rng.integers(0, 4, (3, 2))] = 1.0
    y = rng.integers(0, 2, size=(3, 2)).astype(np.float64)

    def objective():
        probs, value, _ = net.forward(params, x, h)
        bce = -(y * np.log(probs) + (1 - y) * np.log(1 - probs)).sum()
        return float(bce + (value**2).sum())

    probs, value, cache = net.forward(params, x, h)
    dprobs = (probs - y) / (probs * (1 - probs))
    dvalue = 2.0 * value
    net.backward(params, cache, dprobs, dvalue)

    h_fd = 1e-5
    checked = 0
    failures = []
    for name in params.names:
        arr = params.arrays[name]
        grad = params.grads[name]
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(30, flat.size), replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h_fd
            up = objective()
            flat[k] = orig - h_fd
            dn = objective()
            flat[k] = orig
            num = (up - dn) / (2 * h_fd)
            ana = gflat[k]
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            if rel >= 1e-4:
                failures.append((name, int(k), num, ana, rel))
            checked += 1
    assert checked >= 200
    assert not failures, failures[:5]


def test_backward_zero_upstream_gives_zero_grads():
    net = PolicyValueNet(n_intersections=1, lane_cells=20, dtype=np.float64)
    params = net.init_params(np.random.default_rng(0))
    x = np.zeros((2, 1, 24, 20))
    x[0, 0, 3, 4] = 1.0
    h = np.zeros((2, 1, 4))
    h[:, :, 0] = 1.0
    _, _, cache = net.forward(params, x, h)
    net.backward(params, cache, np.zeros((2, 1)), np.zeros(2))
    for name in params.names:
        assert not params.grads[name].any()


def test_value_gradient_does_not_touch_policy_head_column():
    # The value path shares every layer except the final column of out_w:
    # pure value upstream must leave the policy columns of out_w untouched.
    net = PolicyValueNet(n_intersections=2, lane_cells=20, dtype=np.float64)
    params = net.init_params(np.random.default_rng(3))
    rng = np.random.default_rng(4)
    x = rng.random((2, 2, 24, 20))
    h = np.zeros((2, 2, 4))
    h[:, :, 1] = 1.0
    _, _, cache = net.forward(params, x, h)
    net.backward(params, cache, np.zeros((2, 2)), np.ones(2))
    out_w_grad = params.grads["out_w"]
    assert not out_w_grad[:, :2].any()  # policy columns
    assert out_w_grad[:, 2].any()  # value column


# ---------------------------------------------------------------------------
# optimizers


def test_sgd_step_applies_learning_rate():
    store = ParamStore({"w": np.array([1.0, 2.0], dtype=np.float64)})
    store.grads["w"][:] = np.array([0.5, -1.0])
    sgd_step(store, lr=0.1)
    np.testing.assert_allclose(store.arrays["w"], [0.95, 2.1])


def test_adam_first_step_is_near_lr_sized():
    store = ParamStore({"w": np.zeros(3, dtype=np.float64)})
    store.grads["w"][:] = np.array([1.0, -2.0, 0.5])
    opt = Adam()
    opt.step(store, lr=1e-3)
    # First bias-corrected step moves by ~lr in the gradient sign direction.
    np.testing.assert_allclose(
        store.arrays["w"], [-1e-3, 1e-3, -1e-3], rtol=1e-3
    )


def test_adam_state_tracks_each_array():
    rng = np.random.default_rng(0)
    store = ParamStore(
        {"a": rng.normal(size=4), "b": rng.normal(size=(2, 2))}
    )
    opt = Adam()
    for _ in range(3):
        store.grads["a"][:] = rng.normal(size=4)
        store.grads["b"][:] = rng.normal(size=(2, 2))
        opt.step(store, lr=1e-2)
    assert opt.t == 3
    assert set(opt.m) == {"a", "b"}


def test_non_finite_gradients_raise():
    store = ParamStore({"w": np.zeros(2, dtype=np.float64)})
    store.grads["w"][:] = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradientError):
        sgd_step(store, lr=0.1)
    store.grads["w"][:] = np.array([np.inf, 0.0])
    with pytest.raises(NonFiniteGradientError):
        Adam().step(store, lr=0.1)
