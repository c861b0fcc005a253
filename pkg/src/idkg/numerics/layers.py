"""Forward/backward pairs for the few layers the classifier needs.

Each ``*_forward`` returns its output and a cache; the matching
``*_backward`` maps the upstream gradient and cache to input and parameter
gradients.  Nothing here mutates its arguments.
"""

from __future__ import annotations

import numpy as np

from ..errors import IDKGError


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    return x @ W + b, (x, W)


def linear_backward(dout: np.ndarray, cache):
    """Returns ``(dx, dW, db)``."""
    x, W = cache
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    eps: float = 1e-5,
):
    """Batch normalization over axis 0.

    Returns ``(out, cache, batch_stats)``; ``batch_stats`` is ``(mean, var)``
    with the biased variance in train mode and ``None`` in eval mode.  Running
    statistics are left for the caller to update.
    """
    if train:
        if x.shape[0] < 2:
            raise IDKGError("batch normalization in train mode needs a batch of at least 2; use eval mode")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        stats = (mean, var)
    else:
        mean, var = running_mean, running_var
        stats = None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, train), stats


def batchnorm_backward(dout: np.ndarray, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    n = dout.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def update_running_stats(running_mean, running_var, batch_stats, n: int, momentum: float = 0.1):
    """Exponential running averages; the variance uses the unbiased batch estimate."""
    mean, var = batch_stats
    unbiased = var * n / (n - 1)
    return (
        (1.0 - momentum) * running_mean + momentum * mean,
        (1.0 - momentum) * running_var + momentum * unbiased,
    )
