from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idkg.errors import IDKGError
from idkg.numerics import (
    OptimizerConfig,
    ParamStore,
    batchnorm_backward,
    batchnorm_forward,
    decode_tensor,
    encode_tensor,
    grad_check,
    linear_backward,
    linear_forward,
    load_tensor,
    numeric_grad,
    optimizer_step,
    save_tensor,
    sigmoid,
    to_f32_grid,
)
from idkg.numerics.layers import update_running_stats


def test_half_squared_norm_gradient(rng):
    w = rng.normal(size=7)
    assert grad_check(lambda x: 0.5 * float(x @ x), w, w.copy()) < 1e-8


def test_sigmoid_slope_at_zero():
    g = numeric_grad(lambda x: float(sigmoid(x).sum()), np.zeros(1))
    assert g[0] == pytest.approx(0.25, abs=1e-10)


@given(arrays(np.float64, 20, elements=st.floats(-800, 800)))
def test_sigmoid_range_and_stability(x):
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.all((s >= 0) & (s <= 1))
    mid = np.abs(x) < 30
    assert np.all((s[mid] > 0) & (s[mid] < 1))


def test_grad_check_names_nonfinite_coordinate():
    with pytest.raises(IDKGError, match=r"w\[1\]"), np.errstate(invalid="ignore"):
        numeric_grad(lambda p: float(np.log(p["w"]).sum()), {"w": np.array([1.0, 1e-6])}, step=1e-5)


def test_grad_check_zero_tolerance_only_covers_true_zeros():
    f = lambda x: float(x[0] ** 2)  # noqa: E731
    x = np.array([1.0, 2.0])
    assert grad_check(f, x, np.array([2.0, 1e-11])) == 1.0
    assert grad_check(f, x, np.array([2.0, 1e-11]), atol=1e-8) < 1e-8
    assert grad_check(f, x, np.array([2.0 + 1e-9, 0.0]), atol=1e-8) > 0
    assert grad_check(f, x, np.array([0.0, 0.0]), atol=1e-8) == 1.0


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        numeric_grad(lambda x: 0.0, np.zeros(2), step=0.0)


def test_linear_gradients(rng):
    x, W, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3)), rng.normal(size=3)
    C = rng.normal(size=(5, 3))
    out, cache = linear_forward(x, W, b)
    dx, dW, db = linear_backward(C, cache)
    params = {"x": x, "W": W, "b": b}
    f = lambda p: float((linear_forward(p["x"], p["W"], p["b"])[0] * C).sum())  # noqa: E731
    assert grad_check(f, params, {"x": dx, "W": dW, "b": db}) < 1e-8


def test_batchnorm_gradients_train_mode(rng):
    x = rng.normal(size=(8, 4)) * 3 + 1
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    C = rng.normal(size=(8, 4))
    rm, rv = np.zeros(4), np.ones(4)
    out, cache, _ = batchnorm_forward(x, gamma, beta, rm, rv, train=True)
    dx, dg, db = batchnorm_backward(C, cache)

    def f(p):
        return float((batchnorm_forward(p["x"], p["g"], p["b"], rm, rv, train=True)[0] * C).sum())

    assert grad_check(f, {"x": x, "g": gamma, "b": beta}, {"x": dx, "g": dg, "b": db}) < 1e-6


def test_batchnorm_gradients_eval_mode(rng):
    x = rng.normal(size=(3, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2, 4)
    C = rng.normal(size=(3, 4))
    _, cache, stats = batchnorm_forward(x, gamma, beta, rm, rv, train=False)
    assert stats is None
    dx, dg, db = batchnorm_backward(C, cache)
    f = lambda p: float((batchnorm_forward(p["x"], p["g"], p["b"], rm, rv, train=False)[0] * C).sum())  # noqa: E731
    assert grad_check(f, {"x": x, "g": gamma, "b": beta}, {"x": dx, "g": dg, "b": db}) < 1e-8


def test_batchnorm_identical_rows_normalize_to_zero():
    x = np.tile(np.array([[1.0, -2.0, 5.0]]), (4, 1))
    out, _, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), train=True)
    assert np.all(out == 0.0)


def test_batchnorm_train_batch_of_one_points_to_eval_mode():
    with pytest.raises(IDKGError, match="eval mode"):
        batchnorm_forward(np.ones((1, 2)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=True)


def test_running_stats_use_momentum_and_unbiased_variance():
    x = np.array([[0.0], [2.0]])
    _, _, stats = batchnorm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), train=True)
    rm, rv = update_running_stats(np.zeros(1), np.ones(1), stats, 2, momentum=0.1)
    assert rm[0] == pytest.approx(0.1)
    assert rv[0] == pytest.approx(0.9 + 0.1 * 2.0)  # unbiased var of {0, 2} is 2


def test_sgd_half_square():
    store = ParamStore({"w": np.array([1.0])})
    optimizer_step(store, {"w": store["w"].copy()}, OptimizerConfig(kind="sgd", lr=0.5))
    assert store["w"][0] == 0.5


@pytest.mark.parametrize("kind", ["sgd", "adamw"])
def test_zero_gradient_fixed_point(kind, rng):
    w = rng.normal(size=(3, 2))
    store = ParamStore({"w": w.copy()})
    for _ in range(3):
        optimizer_step(store, {"w": np.zeros_like(w)}, OptimizerConfig(kind=kind, weight_decay=0.0))
    assert np.array_equal(store["w"], w)


def test_adamw_decay_is_decoupled(rng):
    w = rng.normal(size=5)
    store = ParamStore({"w": w.copy()})
    cfg = OptimizerConfig(kind="adamw", lr=1e-3, weight_decay=0.01)
    optimizer_step(store, {"w": np.zeros(5)}, cfg)
    assert np.array_equal(store["w"], w - 1e-3 * 0.01 * w)


def test_adamw_matches_reference_update():
    # two hand-unrolled steps with betas (0.9, 0.999), eps 1e-8, wd 0.01
    w, lr, wd = 2.0, 0.1, 0.01
    store = ParamStore({"w": np.array([w])})
    m = v = 0.0
    for t, g in enumerate([0.5, -1.5], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - lr * wd * w
        w = w - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        optimizer_step(store, {"w": np.array([g])}, OptimizerConfig(lr=lr, weight_decay=wd))
    assert store["w"][0] == pytest.approx(w, abs=1e-15)
    assert store.step == 2


def test_adamw_descends_convex_quadratic(rng):
    A = rng.normal(size=(4, 4))
    A = A @ A.T + np.eye(4)
    store = ParamStore({"w": rng.normal(size=4)})
    f = lambda w: 0.5 * w @ A @ w  # noqa: E731
    values = []
    for _ in range(200):
        values.append(f(store["w"]))
        optimizer_step(store, {"w": A @ store["w"]}, OptimizerConfig(lr=1e-3, weight_decay=0.0))
    assert all(b < a for a, b in zip(values[2:], values[3:]))


def test_optimizer_rejects_bad_gradients():
    store = ParamStore({"w": np.zeros(2)})
    with pytest.raises(IDKGError, match="w"):
        optimizer_step(store, {"w": np.array([np.nan, 0.0])}, OptimizerConfig())
    with pytest.raises(IDKGError, match="shape"):
        optimizer_step(store, {"w": np.zeros(3)}, OptimizerConfig())


def test_frozen_parameters_untouched():
    store = ParamStore({"a": np.ones(2), "b": np.ones(2)})
    optimizer_step(store, {"a": np.ones(2)}, OptimizerConfig(kind="sgd", lr=0.1))
    assert np.array_equal(store["b"], np.ones(2))


def test_optimizer_trajectory_is_deterministic(rng):
    start = rng.normal(size=(3, 3))
    grads = [rng.normal(size=(3, 3)) for _ in range(10)]

    def run():
        store = ParamStore({"w": start.copy()})
        for g in grads:
            optimizer_step(store, {"w": g}, OptimizerConfig())
        return store["w"]

    assert np.array_equal(run(), run())


def test_tensor_layout_and_round_trip(tmp_path):
    x = np.arange(6, dtype=np.float64).reshape(2, 3) / 4
    data = encode_tensor(x)
    assert data[:4] == b"TNS1"
    assert int.from_bytes(data[4:8], "little") == 2
    assert int.from_bytes(data[8:12], "little") == 2 and int.from_bytes(data[12:16], "little") == 3
    assert len(data) == 16 + 6 * 4
    assert np.array_equal(decode_tensor(data), x)
    save_tensor(tmp_path / "x.tns", x)
    assert np.array_equal(load_tensor(tmp_path / "x.tns"), x)


def test_tensor_errors():
    with pytest.raises(IDKGError):
        encode_tensor(np.array([np.inf]))
    with pytest.raises(IDKGError):
        decode_tensor(b"TNS0" + bytes(8))
    with pytest.raises(IDKGError):
        decode_tensor(encode_tensor(np.zeros(3))[:-2])


@given(arrays(np.float64, (3, 2), elements=st.floats(-1e30, 1e30)))
def test_f32_grid_is_a_fixed_point_of_persistence(x):
    g = to_f32_grid(x)
    assert np.array_equal(decode_tensor(encode_tensor(g)), g)
