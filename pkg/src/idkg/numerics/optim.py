from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import IDKGError


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class ParamStore:
    """Named float64 parameters plus optimizer moments and a step counter."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def copy(self) -> "ParamStore":
        return ParamStore(
            params={k: v.copy() for k, v in self.params.items()},
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
        )


def optimizer_step(store: ParamStore, grads: dict[str, np.ndarray], config: OptimizerConfig) -> ParamStore:
    """Apply one update in place and return ``store``.

    Parameters without an entry in ``grads`` are left untouched (frozen).
    """
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise IDKGError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise IDKGError(f"non-finite gradient for parameter {name}")

    if config.kind == "sgd":
        for name, g in grads.items():
            store.params[name] -= config.lr * g
        store.step += 1
        return store

    b1, b2 = config.betas
    store.step += 1
    t = store.step
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, g in grads.items():
        p = store.params[name]
        if name not in store.m:
            store.m[name] = np.zeros_like(p)
            store.v[name] = np.zeros_like(p)
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p -= config.lr * config.weight_decay * p
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return store
