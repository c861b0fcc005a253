from __future__ import annotations

import math

import numpy as np
import pytest

from idkg.errors import IDKGError
from idkg.fusion import (
    attend_and_fuse,
    attend_backward,
    attention_teacher_loss,
    gate_gap,
    init_fusion,
    project_backward,
    project_modalities,
    update_buffers,
)
from idkg.numerics import OptimizerConfig, ParamStore, grad_check, optimizer_step

DIMS = {"text": 5, "image": 4, "kg": 3}


def setup(rng, d_p=6, n=7):
    params, buffers = init_fusion(DIMS, d_p, rng)
    inputs = {m: rng.normal(size=(n, d)) for m, d in DIMS.items()}
    return params, buffers, inputs


def test_shapes_and_gate_range(rng):
    params, buffers, inputs = setup(rng)
    h, _, _ = project_modalities(inputs, params, buffers, train=True)
    assert all(v.shape == (7, 6) for v in h.values())
    fb, _ = attend_and_fuse(h, params)
    for a in fb.gates.values():
        assert np.all((a > 0) & (a < 1))
    assert fb.fused.shape == (7, 6)


def test_unit_gates_sum_projections(rng):
    params, buffers, inputs = setup(rng)
    h, _, _ = project_modalities(inputs, params, buffers, train=True)
    ones = {m: np.ones_like(v) for m, v in h.items()}
    fb, _ = attend_and_fuse(h, params, gates=ones)
    assert np.array_equal(fb.fused, h["text"] + h["image"] + h["kg"])


def test_zero_kg_gate_annihilates_kg(rng):
    params, buffers, inputs = setup(rng)
    h, _, _ = project_modalities(inputs, params, buffers, train=True)
    zero = {"kg": np.zeros_like(h["kg"])}
    a, _ = attend_and_fuse(h, params, gates=zero)
    b, _ = attend_and_fuse({**h, "kg": rng.normal(size=h["kg"].shape)}, params, gates=zero)
    assert np.array_equal(a.fused, b.fused)


def test_train_batch_of_one_is_rejected(rng):
    params, buffers, inputs = setup(rng, n=1)
    with pytest.raises(IDKGError, match="eval mode"):
        project_modalities(inputs, params, buffers, train=True)


def test_eval_output_does_not_depend_on_batch(rng):
    params, buffers, inputs = setup(rng, n=9)
    _, _, stats = project_modalities(inputs, params, buffers, train=True)
    update_buffers(buffers, stats, 9)
    full, _, _ = project_modalities(inputs, params, buffers, train=False)
    part, _, _ = project_modalities({m: x[3:5] for m, x in inputs.items()}, params, buffers, train=False)
    for m in DIMS:
        assert np.array_equal(full[m][3:5], part[m])


def test_shared_affine_moves_every_gate(rng):
    params, buffers, inputs = setup(rng)
    h, _, _ = project_modalities(inputs, params, buffers, train=True)
    before, _ = attend_and_fuse(h, params)
    params["att.W"][0, 0] += 0.5
    after, _ = attend_and_fuse(h, params)
    for m in DIMS:
        assert not np.array_equal(before.gates[m], after.gates[m])


def test_teacher_loss_hand_values():
    zero, _ = attention_teacher_loss(np.full((1, 4), 0.3), np.array([0.3]))
    assert zero == pytest.approx(0.0, abs=1e-15)
    quarter, _ = attention_teacher_loss(np.full((1, 4), 0.75), np.array([0.5]))
    assert quarter == pytest.approx(0.287682, abs=1e-6)
    assert quarter == pytest.approx(-math.log(0.75), abs=1e-15)
    clamped, grad = attention_teacher_loss(np.ones((1, 3)), np.array([0.0]))
    assert clamped == pytest.approx(13.8155, abs=1e-4)
    assert not grad.any()


def test_teacher_loss_non_negative(rng):
    for _ in range(50):
        a = rng.uniform(size=(5, 8))
        y = rng.uniform(0, 1, 5)
        loss, _ = attention_teacher_loss(a, y)
        assert loss >= 0
    y = rng.uniform(0, 1, 5)
    assert attention_teacher_loss(np.repeat(y[:, None], 8, axis=1), y)[0] == pytest.approx(0.0, abs=1e-12)


def test_projection_and_attention_gradients(rng):
    params, buffers, inputs = setup(rng)
    C = rng.normal(size=(7, 6))
    y = rng.uniform(0, 0.9, 7)

    def f(p):
        h, _, _ = project_modalities(inputs, p, buffers, train=True)
        fb, _ = attend_and_fuse(h, p)
        return float((fb.fused * C).sum()) + attention_teacher_loss(fb.gates["kg"], y)[0]

    h, pcache, _ = project_modalities(inputs, params, buffers, train=True)
    fb, acache = attend_and_fuse(h, params)
    _, dgate = attention_teacher_loss(fb.gates["kg"], y)
    dh, grads = attend_backward(C, acache, {"kg": dgate})
    grads.update(project_backward(dh, pcache))
    assert grad_check(f, params, grads) < 1e-4


def test_injected_gate_is_constant(rng):
    params, buffers, inputs = setup(rng)
    h, _, _ = project_modalities(inputs, params, buffers, train=True)
    fixed = {"kg": rng.uniform(size=h["kg"].shape)}
    C = rng.normal(size=(7, 6))
    _, cache = attend_and_fuse(h, params, gates=fixed)
    dh, grads = attend_backward(C, cache)
    att = {"att.W": params["att.W"], "att.b": params["att.b"]}

    def f(p):
        return float((attend_and_fuse(h, {**params, **p}, gates=fixed)[0].fused * C).sum())

    assert grad_check(f, att, grads) < 1e-6
    assert np.array_equal(dh["kg"], C * fixed["kg"])


def test_teacher_alone_converges_on_toy_set():
    rng = np.random.default_rng(0)
    params, _ = init_fusion({"kg": 4}, 128, rng)
    h = {"kg": rng.normal(size=(64, 128))}
    y = rng.uniform(0, 0.8, 64)
    store = ParamStore({k: params[k] for k in ("att.W", "att.b")})
    cfg = OptimizerConfig(lr=1e-3)
    for _ in range(500):
        fb, cache = attend_and_fuse(h, store)
        _, dgate = attention_teacher_loss(fb.gates["kg"], y)
        _, grads = attend_backward(np.zeros_like(fb.fused), cache, {"kg": dgate})
        optimizer_step(store, grads, cfg)
    fb, _ = attend_and_fuse(h, store)
    assert gate_gap(fb.gates["kg"], y).mean() < 0.05


def test_running_buffers_follow_momentum(rng):
    params, buffers, inputs = setup(rng)
    _, _, stats = project_modalities(inputs, params, buffers, train=True)
    update_buffers(buffers, stats, 7)
    x = inputs["text"]
    assert np.allclose(buffers["bn_text.running_mean"], 0.1 * x.mean(axis=0))
    assert np.allclose(buffers["bn_text.running_var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))
