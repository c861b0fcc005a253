"""Genre-centroid anchored contrastive loss.

A sample's positive anchor is the mean of its genres' KG embedding rows; its
negatives are the batch's other genres.  Anchors and negatives pass through
one shared affine to the fused width before a temperature-scaled dot product
with the fused feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IDKGError

SIMILARITIES = ("dot", "cosine")


@dataclass
class GenreSpace:
    rows: np.ndarray  # frozen genre embeddings, M x D_k
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


def init_affine(d_k: int, d_p: int) -> dict[str, np.ndarray]:
    """Zero start: anchors and negatives coincide, so the loss begins flat in the fused feature.

    A random start makes the temperature-scaled dot products large before the
    classifier has learned anything, and the early gradient spike inflates
    AdamW's second-moment estimates for every shared parameter.
    """
    return {"gcacl.W": np.zeros((d_k, d_p)), "gcacl.b": np.zeros(d_p)}


def random_genre_rows(n_genres: int, d_k: int, rng: np.random.Generator) -> np.ndarray:
    """Unit rows drawn like fresh KG entity embeddings (the random-init ablation)."""
    bound = 6.0 / np.sqrt(d_k)
    rows = rng.uniform(-bound, bound, (n_genres, d_k))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def genre_centroid(genres, rows: np.ndarray) -> np.ndarray:
    genres = list(genres)
    if not genres:
        raise IDKGError("a genre centroid needs at least one genre")
    return rows[genres].mean(axis=0)


def batch_negatives(genre_sets) -> list[set]:
    sets = [set(g) for g in genre_sets]
    union = set().union(*sets) if sets else set()
    return [union - s for s in sets]


def _normalize(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    n = np.maximum(n, 1e-12)
    return x / n, n


def _normalize_backward(dy, y, n):
    return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / n


def gcacl_loss(fused: np.ndarray, labels: np.ndarray, space: GenreSpace, affine, similarity: str = "dot"):
    """Contrastive loss summed over the batch, with gradients.

    ``labels`` is the B x M binary genre matrix; each row needs at least one
    genre.  Returns ``(loss, per_sample, dfused, grads)`` where ``grads`` holds
    ``gcacl.W``/``gcacl.b``.
    """
    if similarity not in SIMILARITIES:
        raise ValueError(f"similarity must be one of {SIMILARITIES}")
    labels = np.asarray(labels, dtype=np.float64)
    counts = labels.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise IDKGError("every sample in a contrastive batch needs at least one genre")
    W, b = affine["gcacl.W"], affine["gcacl.b"]
    E = space.rows
    centroids = (labels @ E) / counts
    f_c = centroids @ W + b
    f_e = E @ W + b
    neg_mask = (labels.max(axis=0)[None, :] > 0) & (labels == 0)

    if similarity == "cosine":
        F_u, F_n = _normalize(fused)
        c_u, c_n = _normalize(f_c)
        e_u, e_n = _normalize(f_e)
    else:
        F_u, c_u, e_u = fused, f_c, f_e

    pos = (F_u * c_u).sum(axis=1) / space.tau
    neg = (F_u @ e_u.T) / space.tau
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise IDKGError("non-finite similarity in contrastive loss")
    neg_masked = np.where(neg_mask, neg, -np.inf)
    top = np.maximum(pos, neg_masked.max(axis=1))
    w_pos = np.exp(pos - top)
    w_neg = np.where(neg_mask, np.exp(neg_masked - top[:, None]), 0.0)
    denom = w_pos + w_neg.sum(axis=1)
    per_sample = np.log(denom) + top - pos
    loss = float(per_sample.sum())

    g_pos = w_pos / denom - 1.0
    g_neg = w_neg / denom[:, None]
    dF_u = (g_pos[:, None] * c_u + g_neg @ e_u) / space.tau
    dc_u = g_pos[:, None] * F_u / space.tau
    de_u = g_neg.T @ F_u / space.tau
    if similarity == "cosine":
        dfused = _normalize_backward(dF_u, F_u, F_n)
        df_c = _normalize_backward(dc_u, c_u, c_n)
        df_e = _normalize_backward(de_u, e_u, e_n)
    else:
        dfused, df_c, df_e = dF_u, dc_u, de_u
    grads = {
        "gcacl.W": centroids.T @ df_c + E.T @ df_e,
        "gcacl.b": df_c.sum(axis=0) + df_e.sum(axis=0),
    }
    return loss, per_sample, dfused, grads
