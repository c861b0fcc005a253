"""Translate-model embeddings of the domain KG.

Four scoring functions share one trainer: margin ranking loss over
same-kind corrupted triples, minibatch SGD, and entity renormalization after
every epoch.  Scores are distances, so lower means more plausible.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, IDKGError
from .io import atomic_write_text, read_manifest, require_file, write_manifest
from .kg import ENTITY_KINDS, N_RELATIONS, DomainKG, RelationKind, encode_entities
from .numerics import load_tensor, save_tensor, to_f32_grid

log = logging.getLogger(__name__)

MODELS = ("TransE", "TransH", "TransR", "RotatE")


@dataclass(frozen=True)
class KgeConfig:
    model: str = "RotatE"
    dim: int = 200
    epochs: int = 500
    batch_size: int = 100
    lr: float = 0.5
    margin: float = 1.0
    negatives: int = 1
    seed: int = 0
    adversarial_temperature: float | None = None
    proj_lr_scale: float = 0.1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown translate model {self.model!r}; choose from {MODELS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.model == "RotatE" and self.dim % 2:
            raise ValueError("RotatE stores complex entries as re/im pairs; dim must be even")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.proj_lr_scale <= 0:
            raise ValueError("proj_lr_scale must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class KgModelParams:
    model: str
    entity: np.ndarray
    relation: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"entity": self.entity, "relation": self.relation, **self.extras}

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def copy(self) -> "KgModelParams":
        return KgModelParams(
            self.model, self.entity.copy(), self.relation.copy(), {k: v.copy() for k, v in self.extras.items()}
        )


# -- scoring functions -------------------------------------------------------
#
# ``score(P, h, r, t)`` takes equal-length index arrays; ``grad(P, h, r, t, w)``
# returns d(sum_i w_i * score_i)/dP as dense arrays keyed like ``P.arrays()``.


def _zeros_like(P: KgModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in P.arrays().items()}


def _transe_score(P, h, r, t):
    return np.abs(P.entity[h] + P.relation[r] - P.entity[t]).sum(axis=-1)


def _transe_grad(P, h, r, t, w):
    s = np.sign(P.entity[h] + P.relation[r] - P.entity[t]) * w[:, None]
    g = _zeros_like(P)
    np.add.at(g["entity"], h, s)
    np.add.at(g["entity"], t, -s)
    np.add.at(g["relation"], r, s)
    return g


def _transh_parts(P, h, r, t):
    e = P.entity[h] - P.entity[t]
    n = P.extras["normal"][r]
    s = (n * e).sum(axis=-1, keepdims=True)
    v = e - s * n + P.relation[r]
    return e, n, s, v


def _transh_score(P, h, r, t):
    return (_transh_parts(P, h, r, t)[3] ** 2).sum(axis=-1)


def _transh_grad(P, h, r, t, w):
    e, n, s, v = _transh_parts(P, h, r, t)
    gv = 2.0 * v * w[:, None]
    ng = (n * gv).sum(axis=-1, keepdims=True)
    de = gv - n * ng
    g = _zeros_like(P)
    np.add.at(g["entity"], h, de)
    np.add.at(g["entity"], t, -de)
    np.add.at(g["relation"], r, gv)
    np.add.at(g["normal"], r, -(e * ng + s * gv))
    return g


def _transr_parts(P, h, r, t):
    e = P.entity[h] - P.entity[t]
    M = P.extras["proj"][r]
    v = np.einsum("nij,nj->ni", M, e) + P.relation[r]
    return e, M, v


def _transr_score(P, h, r, t):
    return (_transr_parts(P, h, r, t)[2] ** 2).sum(axis=-1)


def _transr_grad(P, h, r, t, w):
    e, M, v = _transr_parts(P, h, r, t)
    gv = 2.0 * v * w[:, None]
    de = np.einsum("nij,ni->nj", M, gv)
    g = _zeros_like(P)
    np.add.at(g["entity"], h, de)
    np.add.at(g["entity"], t, -de)
    np.add.at(g["relation"], r, gv)
    for rel in np.unique(r):
        sel = r == rel
        g["proj"][rel] += gv[sel].T @ e[sel]
    return g


def _rotate_parts(P, h, r, t):
    a, b = P.entity[h, 0::2], P.entity[h, 1::2]
    c, d = P.entity[t, 0::2], P.entity[t, 1::2]
    theta = P.relation[r]
    cos, sin = np.cos(theta), np.sin(theta)
    re = a * cos - b * sin - c
    im = a * sin + b * cos - d
    return a, b, cos, sin, re, im


def _rotate_score(P, h, r, t):
    re, im = _rotate_parts(P, h, r, t)[4:]
    return np.sqrt(re * re + im * im).sum(axis=-1)


def _rotate_grad(P, h, r, t, w):
    a, b, cos, sin, re, im = _rotate_parts(P, h, r, t)
    mod = np.sqrt(re * re + im * im)
    safe = np.where(mod > 0, mod, 1.0)
    dre = np.where(mod > 0, re / safe, 0.0) * w[:, None]
    dim = np.where(mod > 0, im / safe, 0.0) * w[:, None]
    dh = np.empty((len(h), P.dim))
    dh[:, 0::2] = dre * cos + dim * sin
    dh[:, 1::2] = -dre * sin + dim * cos
    dt = np.empty_like(dh)
    dt[:, 0::2] = -dre
    dt[:, 1::2] = -dim
    dtheta = dre * (-a * sin - b * cos) + dim * (a * cos - b * sin)
    g = _zeros_like(P)
    np.add.at(g["entity"], h, dh)
    np.add.at(g["entity"], t, dt)
    np.add.at(g["relation"], r, dtheta)
    return g


_SCORE = {"TransE": _transe_score, "TransH": _transh_score, "TransR": _transr_score, "RotatE": _rotate_score}
_GRAD = {"TransE": _transe_grad, "TransH": _transh_grad, "TransR": _transr_grad, "RotatE": _rotate_grad}


def score(P: KgModelParams, h, r, t) -> np.ndarray:
    h, r, t = np.broadcast_arrays(np.atleast_1d(h), np.atleast_1d(r), np.atleast_1d(t))
    return _SCORE[P.model](P, h, r, t)


def score_grad(P: KgModelParams, h, r, t, weights) -> dict[str, np.ndarray]:
    h, r, t, weights = np.broadcast_arrays(
        np.atleast_1d(h), np.atleast_1d(r), np.atleast_1d(t), np.atleast_1d(np.asarray(weights, dtype=np.float64))
    )
    return _GRAD[P.model](P, h, r, t, weights)


def score_triple(P: KgModelParams, triple) -> float:
    h, r, t = (int(x) for x in triple)
    n = P.entity.shape[0]
    if not (0 <= h < n and 0 <= t < n and 0 <= r < P.relation.shape[0]):
        raise IndexError(f"triple {triple} out of range for {n} entities")
    return float(score(P, h, r, t)[0])


def init_params(model: str, n_entities: int, dim: int, rng: np.random.Generator, n_relations: int = N_RELATIONS):
    bound = 6.0 / np.sqrt(dim)
    entity = rng.uniform(-bound, bound, size=(n_entities, dim))
    entity /= np.maximum(np.linalg.norm(entity, axis=1, keepdims=True), 1e-12)
    extras: dict[str, np.ndarray] = {}
    if model == "RotatE":
        relation = rng.uniform(0.0, 2.0 * np.pi, size=(n_relations, dim // 2))
    else:
        relation = rng.uniform(-bound, bound, size=(n_relations, dim))
        relation /= np.maximum(np.linalg.norm(relation, axis=1, keepdims=True), 1e-12)
    if model == "TransH":
        normal = rng.uniform(-bound, bound, size=(n_relations, dim))
        extras["normal"] = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    elif model == "TransR":
        extras["proj"] = np.tile(np.eye(dim), (n_relations, 1, 1))
    return KgModelParams(model, entity, relation, extras)


def _project_constraints(P: KgModelParams) -> None:
    if P.model == "TransH":
        n = P.extras["normal"]
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    elif P.model == "TransR":
        # ||M_r x|| <= ||x|| <= 1 and ||r|| <= 1
        M = P.extras["proj"]
        top = np.linalg.norm(M, ord=2, axis=(1, 2))
        M /= np.maximum(top, 1.0)[:, None, None]
        P.relation /= np.maximum(np.linalg.norm(P.relation, axis=1, keepdims=True), 1.0)


def _renormalize_entities(P: KgModelParams) -> None:
    P.entity /= np.maximum(np.linalg.norm(P.entity, axis=1, keepdims=True), 1e-12)


# -- negative sampling -------------------------------------------------------


def corrupt_triple(kg: DomainKG, triple, rng: np.random.Generator, max_tries: int = 100):
    """Replace head or tail (fair coin) with a same-kind entity.

    Returns ``(negative, flagged)``; ``flagged`` is True when every draw within
    ``max_tries`` collided with a known triple, in which case the last draw is
    returned.
    """
    if kg.n_entities == 0:
        raise IDKGError("cannot corrupt triples of an empty graph")
    h, r, t = (int(x) for x in triple)
    rel = RelationKind(r)
    replace_head = rng.random() < 0.5
    pool = kg.members(rel.head_kind if replace_head else rel.tail_kind)
    known = kg.triple_set
    cand = (h, r, t)
    for _ in range(max_tries):
        e = int(pool[rng.integers(len(pool))])
        cand = (e, r, t) if replace_head else (h, r, e)
        if cand not in known:
            return cand, False
    return cand, True


def corrupt_batch(kg: DomainKG, triples: np.ndarray, rng: np.random.Generator, max_tries: int = 100):
    """Vectorized ``corrupt_triple`` over a batch; returns ``(negatives, flagged_mask)``."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    replace_head = rng.random(n) < 0.5
    rel = triples[:, 1]
    heads_kind = np.array([RelationKind(r).head_kind.code for r in range(N_RELATIONS)])
    tails_kind = np.array([RelationKind(r).tail_kind.code for r in range(N_RELATIONS)])
    kind = np.where(replace_head, heads_kind[rel], tails_kind[rel])
    pools = [kg.members(k) for k in ENTITY_KINDS]
    sizes = np.array([len(p) for p in pools])
    known = kg.triple_set
    out = triples.copy()
    pending = np.arange(n)
    for _ in range(max_tries):
        u = rng.random(len(pending))
        k = kind[pending]
        picks = np.empty(len(pending), dtype=np.int64)
        for code in np.unique(k):
            sel = k == code
            picks[sel] = pools[code][(u[sel] * sizes[code]).astype(np.int64)]
        rh = replace_head[pending]
        out[pending[rh], 0] = picks[rh]
        out[pending[~rh], 2] = picks[~rh]
        still = [i for i in pending if tuple(out[i].tolist()) in known]
        pending = np.asarray(still, dtype=np.int64)
        if not len(pending):
            break
    flagged = np.zeros(n, dtype=bool)
    flagged[pending] = True
    return out, flagged


# -- training ---------------------------------------------------------------


def margin_loss(P: KgModelParams, pos: np.ndarray, neg: np.ndarray, margin: float, adversarial_temperature=None):
    """Mean hinge ``max(0, margin + d(pos) - d(neg))`` and its gradient.

    ``neg`` has shape (n_pos, k, 3).  With ``adversarial_temperature`` set, the
    k negatives of a positive are weighted by a (constant) softmax of
    ``-temperature * d(neg)`` instead of uniformly.
    """
    pos = np.asarray(pos).reshape(-1, 3)
    n, k = neg.shape[0], neg.shape[1]
    flat = neg.reshape(-1, 3)
    d_pos = score(P, pos[:, 0], pos[:, 1], pos[:, 2])
    d_neg = score(P, flat[:, 0], flat[:, 1], flat[:, 2]).reshape(n, k)
    if adversarial_temperature:
        z = -adversarial_temperature * d_neg
        z -= z.max(axis=1, keepdims=True)
        wts = np.exp(z)
        wts /= wts.sum(axis=1, keepdims=True)
    else:
        wts = np.full((n, k), 1.0 / k)
    hinge = margin + d_pos[:, None] - d_neg
    active = hinge > 0
    loss = float((wts * np.where(active, hinge, 0.0)).sum() / n)
    coef = wts * active / n
    g = score_grad(P, pos[:, 0], pos[:, 1], pos[:, 2], coef.sum(axis=1))
    g_neg = score_grad(P, flat[:, 0], flat[:, 1], flat[:, 2], -coef.reshape(-1))
    for name in g:
        g[name] += g_neg[name]
    return loss, g


def train_embeddings(kg: DomainKG, config: KgeConfig, rng: np.random.Generator | None = None, progress=None):
    """Train ``config.model`` on ``kg`` and return float32-representable params."""
    if kg.n_triples == 0:
        raise IDKGError("cannot train embeddings on a graph without triples")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    P = init_params(config.model, kg.n_entities, config.dim, rng)
    triples = kg.triples
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start:start + config.batch_size]]
            rep = np.repeat(pos, config.negatives, axis=0)
            neg, _ = corrupt_batch(kg, rep, rng)
            loss, grads = margin_loss(
                P, pos, neg.reshape(len(pos), config.negatives, 3), config.margin, config.adversarial_temperature
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite KGE loss at epoch {epoch}")
            for name, arr in P.arrays().items():
                step = config.lr * (config.proj_lr_scale if name == "proj" else 1.0)
                arr -= step * grads[name]
            _project_constraints(P)
            total += loss * len(pos)
        _renormalize_entities(P)
        if not all(np.all(np.isfinite(a)) for a in P.arrays().values()):
            raise DivergenceError(f"non-finite embedding parameters at epoch {epoch}")
        history.append(total / len(triples))
        if progress is not None:
            progress(epoch, history[-1])
    P.entity[...] = to_f32_grid(P.entity)
    P.relation[...] = to_f32_grid(P.relation)
    for arr in P.extras.values():
        arr[...] = to_f32_grid(arr)
    return P, history


# -- evaluation -------------------------------------------------------------


def eval_link_prediction(
    kg: DomainKG,
    P: KgModelParams,
    test_triples,
    k: int = 10,
    filtered: bool = True,
    candidates: str = "kind",
    known=None,
) -> dict:
    """Rank the true tail and the true head of each test triple.

    ``candidates="kind"`` ranks against entities of the answer's kind,
    ``"all"`` against the whole entity table.  ``known`` (default: the graph's
    triples plus the test triples) drives the filtered protocol.  Rank is one
    plus the number of candidates scoring strictly better.
    """
    test = np.asarray(test_triples, dtype=np.int64).reshape(-1, 3)
    if len(test) == 0:
        raise IDKGError("link prediction needs at least one test triple")
    if candidates not in ("kind", "all"):
        raise ValueError("candidates must be 'kind' or 'all'")
    if known is None:
        known = kg.triple_set | set(map(tuple, test.tolist()))
    all_ids = np.arange(kg.n_entities)
    ranks = []
    for h, r, t in test.tolist():
        rel = RelationKind(r)
        for side in ("tail", "head"):
            answer = t if side == "tail" else h
            kind = rel.tail_kind if side == "tail" else rel.head_kind
            cand = kg.members(kind) if candidates == "kind" else all_ids
            if side == "tail":
                scores = score(P, h, r, cand)
                true = score(P, h, r, t)[0]
                clash = [(h, r, int(c)) in known for c in cand] if filtered else None
            else:
                scores = score(P, cand, r, t)
                true = score(P, h, r, t)[0]
                clash = [(int(c), r, t) in known for c in cand] if filtered else None
            keep = cand != answer
            if filtered:
                keep &= ~np.asarray(clash, dtype=bool)
            ranks.append(1 + int((scores[keep] < true).sum()))
    ranks = np.asarray(ranks, dtype=np.float64)
    return {
        f"hits@{k}": float((ranks <= k).mean()),
        "mrr": float((1.0 / ranks).mean()),
        "mean_rank": float(ranks.mean()),
        "queries": int(len(ranks)),
        "filtered": bool(filtered),
        "candidates": candidates,
    }


def split_triples(kg: DomainKG, fraction: float, rng: np.random.Generator):
    """Hold out about ``fraction`` of triples while every entity keeps a training triple."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("holdout fraction must be in [0, 1)")
    target = int(round(fraction * kg.n_triples))
    remaining = kg.degree.copy()
    test_idx = []
    for i in rng.permutation(kg.n_triples):
        if len(test_idx) >= target:
            break
        h, _, t = kg.triples[i]
        if remaining[h] > 1 and remaining[t] > 1:
            remaining[h] -= 1
            remaining[t] -= 1
            test_idx.append(i)
    mask = np.ones(kg.n_triples, dtype=bool)
    mask[test_idx] = False
    train = DomainKG(entities=list(kg.entities), triples=kg.triples[mask])
    return train, kg.triples[np.sort(np.asarray(test_idx, dtype=np.int64))]


# -- checkpoints ------------------------------------------------------------


def save_embeddings(P: KgModelParams, directory, config: KgeConfig, kg: DomainKG, kg_hash: str, extra=None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write_text(directory / "entities.jsonl", encode_entities(kg.entities))
    files = ["entities.jsonl"]
    for name, arr in P.arrays().items():
        save_tensor(directory / f"{name}.tns", arr)
        files.append(f"{name}.tns")
    payload = {
        "kind": "kge",
        "model": P.model,
        "dim": P.dim,
        "seed": config.seed,
        "epochs": config.epochs,
        "config": asdict(config),
        "kg_hash": kg_hash,
        **(extra or {}),
    }
    return write_manifest(directory, payload, files)


def load_embeddings(directory) -> tuple[KgModelParams, dict]:
    directory = require_file(directory)
    manifest = read_manifest(directory)
    arrays = {}
    for name in manifest["files"]:
        if name.endswith(".tns"):
            arrays[name[:-4]] = load_tensor(directory / name)
    entity = arrays.pop("entity")
    relation = arrays.pop("relation")
    return KgModelParams(manifest["model"], entity, relation, arrays), manifest


def write_history(path: str | os.PathLike, history: list[float]) -> None:
    atomic_write_text(path, json.dumps({"loss": history}) + "\n")
