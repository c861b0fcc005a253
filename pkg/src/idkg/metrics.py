"""Multi-label F1 in micro, macro, support-weighted and per-sample forms."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IDKGError


@dataclass
class GenreScore:
    genre: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    weighted_f1: float
    samples_f1: float
    per_genre: list[GenreScore] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "micro": self.micro_f1,
            "macro": self.macro_f1,
            "weighted": self.weighted_f1,
            "samples": self.samples_f1,
            "per_genre": [asdict(g) for g in self.per_genre],
        }


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def indicator(sets, M: int) -> np.ndarray:
    out = np.zeros((len(sets), M), dtype=np.int64)
    for i, s in enumerate(sets):
        for g in s:
            if not 0 <= g < M:
                raise IDKGError(f"genre index {g} outside [0, {M})")
            out[i, g] = 1
    return out


def f1_report(predicted, truth, M: int, genre_names=None) -> MetricsReport:
    """Score predicted genre sets against true ones over ``M`` genres.

    Per-genre F1 is 0 when a genre has no predictions and no support; a
    sample whose prediction and truth are both empty scores 1.
    """
    if len(predicted) != len(truth):
        raise IDKGError(f"{len(predicted)} predictions for {len(truth)} samples")
    if not truth:
        raise IDKGError("cannot score an empty sample list")
    P = indicator(predicted, M)
    T = indicator(truth, M)
    tp = (P & T).sum(axis=0)
    fp = (P & (1 - T)).sum(axis=0)
    fn = ((1 - P) & T).sum(axis=0)
    support = T.sum(axis=0)

    micro = float(_safe_div(2 * tp.sum(), 2 * tp.sum() + fp.sum() + fn.sum()))
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    macro = float(f1.mean())
    weighted = float((f1 * support).sum() / support.sum()) if support.sum() else 0.0

    tp_s = (P & T).sum(axis=1)
    den_s = P.sum(axis=1) + T.sum(axis=1)
    samples = float(np.where(den_s == 0, 1.0, _safe_div(2 * tp_s, den_s)).mean())

    names = list(genre_names) if genre_names is not None else [str(j) for j in range(M)]
    per_genre = [
        GenreScore(names[j], float(precision[j]), float(recall[j]), float(f1[j]), int(support[j])) for j in range(M)
    ]
    return MetricsReport(micro, macro, weighted, samples, per_genre)
