"""Per-sample KG modality: matched people, summed embeddings, pseudo-labels."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .io import atomic_write_text, require_file
from .kg import CorpusStats, DomainKG, MetadataRecord


@dataclass(frozen=True)
class EntityMatch:
    indices: tuple[int, ...]
    n_directors: int
    n_casts: int
    degree_sum: int

    @property
    def n_matched(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class KgFeature:
    vector: np.ndarray
    present: bool


def collect_entities(record: MetadataRecord, kg: DomainKG) -> EntityMatch:
    """Directors then casts of ``record`` found in ``kg``; unseen names are dropped.

    ``n_directors``/``n_casts`` are the record's own counts, matched or not.
    """
    found, _, _ = kg.match_people(record)
    return EntityMatch(
        indices=tuple(found),
        n_directors=len(record.directors),
        n_casts=len(record.casts),
        degree_sum=int(kg.degree[found].sum()) if found else 0,
    )


def form_kg_feature(match: EntityMatch, entity_matrix: np.ndarray) -> KgFeature:
    if not match.indices:
        return KgFeature(np.zeros(entity_matrix.shape[1]), False)
    return KgFeature(entity_matrix[list(match.indices)].sum(axis=0), True)


def kg_feature_matrix(matches: list[EntityMatch], entity_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``form_kg_feature`` over samples; returns ``(features, present_mask)``."""
    out = np.zeros((len(matches), entity_matrix.shape[1]))
    present = np.zeros(len(matches), dtype=bool)
    for i, m in enumerate(matches):
        if m.indices:
            out[i] = entity_matrix[list(m.indices)].sum(axis=0)
            present[i] = True
    return out, present


def _ratio(x: float, mean: float) -> float:
    if mean > 0:
        return x / (x + mean)
    return 1.0 if x > 0 else 0.0


def pseudo_label_value(n: float, s: float, mean_dc: float, mean_v: float) -> float:
    """``n*s / ((n + mean_dc) * (s + mean_v))`` with the degenerate-mean guard."""
    return _ratio(n, mean_dc) * _ratio(s, mean_v)


def pseudo_label(match: EntityMatch, stats: CorpusStats) -> float:
    return pseudo_label_value(match.n_matched, match.degree_sum, stats.mean_dc, stats.mean_V)


def write_pseudo_label_cache(path: str | os.PathLike, ids: list[str], matches: list[EntityMatch], labels) -> None:
    lines = [
        json.dumps(
            {"movie_id": i, "pseudo_label": float(y), "n_matched": m.n_matched, "degree_sum": m.degree_sum}
        )
        for i, m, y in zip(ids, matches, labels)
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_pseudo_label_cache(path: str | os.PathLike) -> dict[str, dict]:
    out = {}
    with open(require_file(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[row["movie_id"]] = row
    return out
