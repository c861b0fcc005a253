from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import IDKGError


def _as_dict(params):
    if isinstance(params, np.ndarray):
        return {"x": params}, True
    return params, False


def numeric_grad(fn: Callable, params, step: float = 1e-5):
    """Central differences of ``fn(params)`` with respect to every coordinate.

    ``params`` is an array or a mapping of name -> array; entries are perturbed
    in place and restored exactly.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    table, single = _as_dict(params)
    out = {}
    for name, arr in table.items():
        g = np.zeros(arr.shape, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn(params)
            flat[i] = orig - step
            f_minus = fn(params)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                coord = ", ".join(str(int(c)) for c in np.unravel_index(i, arr.shape))
                raise IDKGError(f"non-finite function value perturbing {name}[{coord}]")
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        out[name] = g
    return out["x"] if single else out


def _rel_error(a, n, atol):
    rel = np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))
    # a relative error is undefined where the true derivative is zero; both sides within
    # ``atol`` of zero count as agreement
    return np.where((np.abs(a) <= atol) & (np.abs(n) <= atol), 0.0, rel)


def grad_check(fn: Callable, params, analytic, step: float = 1e-5, atol: float = 0.0) -> float:
    """Max over coordinates of ``|a - n| / max(1e-12, |a| + |n|)``.

    ``analytic`` mirrors the structure of ``params``.  Coordinates where both
    gradients are at most ``atol`` in magnitude are treated as exact zeros.
    """
    numeric = numeric_grad(fn, params, step)
    if isinstance(params, np.ndarray):
        numeric, analytic = {"x": numeric}, {"x": analytic}
    worst = 0.0
    for name, n in numeric.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != n.shape:
            raise ValueError(f"analytic gradient for {name} has shape {a.shape}, expected {n.shape}")
        rel = _rel_error(a, n, atol)
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst


def grad_check_detail(
    fn: Callable, params: Mapping, analytic: Mapping, step: float = 1e-5, atol: float = 0.0
) -> dict[str, float]:
    """Per-parameter max relative error (diagnostics for failing checks)."""
    numeric = numeric_grad(fn, params, step)
    return {
        name: float(_rel_error(np.asarray(analytic[name], dtype=np.float64), n, atol).max(initial=0.0))
        for name, n in numeric.items()
    }
