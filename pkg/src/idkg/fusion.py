"""Modality alignment, shared sigmoid gating and the attention-teacher loss.

Each modality ``m`` is mapped as ``h_m = project_m(batchnorm_m(x_m))`` to a
common width; one shared affine + sigmoid produces a per-dimension gate
``A_m`` for every modality, and the fused feature is ``sum_m h_m * A_m``.
Parameters live in a flat ``name -> array`` dict so the optimizer and the
gradient checker can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import batchnorm_backward, batchnorm_forward, linear_backward, linear_forward, sigmoid
from .numerics.layers import update_running_stats

MODALITIES = ("text", "image", "kg")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
GAP_CLAMP = 1.0 - 1e-6


def _linear_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)


def init_fusion(dims: dict[str, int], d_p: int, rng: np.random.Generator):
    """Fresh parameters and batch-norm buffers for the modalities in ``dims``."""
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for m, d in dims.items():
        params[f"bn_{m}.gamma"] = np.ones(d)
        params[f"bn_{m}.beta"] = np.zeros(d)
        buffers[f"bn_{m}.running_mean"] = np.zeros(d)
        buffers[f"bn_{m}.running_var"] = np.ones(d)
        params[f"proj_{m}.W"], params[f"proj_{m}.b"] = _linear_init(rng, d, d_p)
    params["att.W"], params["att.b"] = _linear_init(rng, d_p, d_p)
    return params, buffers


def project_modalities(inputs: dict[str, np.ndarray], params, buffers, train: bool):
    """Returns ``(h, cache, batch_stats)`` keyed by modality."""
    h, cache, stats = {}, {}, {}
    for m, x in inputs.items():
        xn, bn_cache, st = batchnorm_forward(
            x,
            params[f"bn_{m}.gamma"],
            params[f"bn_{m}.beta"],
            buffers[f"bn_{m}.running_mean"],
            buffers[f"bn_{m}.running_var"],
            train=train,
            eps=BN_EPS,
        )
        h[m], lin_cache = linear_forward(xn, params[f"proj_{m}.W"], params[f"proj_{m}.b"])
        cache[m] = (bn_cache, lin_cache)
        stats[m] = st
    return h, cache, stats


def project_backward(dh: dict[str, np.ndarray], cache) -> dict[str, np.ndarray]:
    grads = {}
    for m, g in dh.items():
        bn_cache, lin_cache = cache[m]
        dxn, grads[f"proj_{m}.W"], grads[f"proj_{m}.b"] = linear_backward(g, lin_cache)
        _, grads[f"bn_{m}.gamma"], grads[f"bn_{m}.beta"] = batchnorm_backward(dxn, bn_cache)
    return grads


def update_buffers(buffers, batch_stats, n: int) -> None:
    for m, st in batch_stats.items():
        if st is None:
            continue
        key_m, key_v = f"bn_{m}.running_mean", f"bn_{m}.running_var"
        buffers[key_m], buffers[key_v] = update_running_stats(buffers[key_m], buffers[key_v], st, n, BN_MOMENTUM)


@dataclass
class FusedBatch:
    h: dict[str, np.ndarray]
    gates: dict[str, np.ndarray]
    fused: np.ndarray


def attend_and_fuse(h: dict[str, np.ndarray], params, gates: dict[str, np.ndarray] | None = None):
    """Gate every modality with the shared attention affine and sum.

    ``gates`` injects fixed gate tensors for selected modalities (testing and
    analysis); injected gates are treated as constants by the backward pass.
    Returns ``(FusedBatch, cache)``.
    """
    gates = dict(gates or {})
    injected = set(gates)
    lin = {}
    for m, hm in h.items():
        if m in injected:
            continue
        z, lin[m] = linear_forward(hm, params["att.W"], params["att.b"])
        gates[m] = sigmoid(z)
    fused = sum(h[m] * gates[m] for m in h)
    batch = FusedBatch(h=dict(h), gates=gates, fused=fused)
    return batch, (batch, lin)


def attend_backward(dfused: np.ndarray, cache, dgates: dict[str, np.ndarray] | None = None):
    """Returns ``(dh, grads)`` for ``att.W``/``att.b``; ``dgates`` adds direct gate gradients."""
    batch, lin = cache
    dgates = dgates or {}
    dh = {}
    dW = np.zeros_like(next(iter(lin.values()))[1]) if lin else None
    db = None
    for m, hm in batch.h.items():
        a = batch.gates[m]
        dh[m] = dfused * a
        if m not in lin:
            continue
        da = dfused * hm
        if m in dgates:
            da = da + dgates[m]
        dz = da * a * (1.0 - a)
        dhm, dWm, dbm = linear_backward(dz, lin[m])
        dh[m] = dh[m] + dhm
        dW = dW + dWm
        db = dbm if db is None else db + dbm
    grads = {"att.W": dW, "att.b": db} if lin else {}
    return dh, grads


def attention_teacher_loss(gate_kg: np.ndarray, pseudo: np.ndarray):
    """``-sum_i log(1 - min(|mean_j A_ij - y_i|, 1 - 1e-6))`` and its gradient w.r.t. the gate."""
    a = gate_kg.mean(axis=1)
    gap = a - pseudo
    dist = np.abs(gap)
    clipped = dist >= GAP_CLAMP
    loss = float(-np.log1p(-np.minimum(dist, GAP_CLAMP)).sum())
    da = np.where(clipped, 0.0, np.sign(gap) / (1.0 - np.minimum(dist, GAP_CLAMP)))
    dgate = np.repeat(da[:, None] / gate_kg.shape[1], gate_kg.shape[1], axis=1)
    return loss, dgate


def gate_gap(gate_kg: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    """Per-sample ``|mean_j A_ij - y_i|``."""
    return np.abs(gate_kg.mean(axis=1) - pseudo)
