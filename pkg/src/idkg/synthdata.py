"""Deterministic synthetic corpora with planted metadata -> genre structure.

Every director and cast member gets a latent genre affinity.  A movie draws
1-3 genres, then each of its people comes from the affinity pool of one of
its genres with probability ``kg_signal`` (uniformly from everyone
otherwise).  Text and image features blend per-genre prototype vectors
with isotropic noise (weight ``feat_noise``), so all three modalities carry
real but imperfect signal.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import IDKGError
from .io import atomic_write_text, dumps_json, write_features
from .kg import DomainKG, MetadataRecord, build_kg, dump_metadata

# MM-IMDb genre vocabulary, most to least frequent.
GENRE_NAMES = (
    "Drama", "Comedy", "Action", "Adventure", "Romance", "Crime", "Horror", "Thriller",
    "Biography", "Animation", "Family", "Mystery", "Fantasy", "Music", "History", "Western",
    "Sci-Fi", "Musical", "Sport", "Short", "War", "Documentary", "Film-Noir",
)


@dataclass(frozen=True)
class SynthConfig:
    n_movies: int = 500
    n_genres: int = 8
    n_directors: int = 60
    n_casts: int = 200
    d_text: int = 64
    d_image: int = 64
    kg_signal: float = 0.9
    feat_noise: float = 0.75
    split: tuple[float, float, float] = (0.6, 0.1, 0.3)
    test_unseen_fraction: float = 0.2
    casts_per_movie: tuple[int, int] = (2, 5)
    seed: int = 42

    def __post_init__(self):
        if self.n_movies < 10:
            raise IDKGError("n_movies must be at least 10 to populate the splits")
        if not 1 <= self.n_genres <= len(GENRE_NAMES):
            raise ValueError(f"n_genres must be in [1, {len(GENRE_NAMES)}]")
        if self.n_directors < 1 or self.n_casts < 1:
            raise ValueError("need at least one director and one cast member")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions (train, valid, test) must be non-negative and sum to 1")
        for name in ("kg_signal", "feat_noise", "test_unseen_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.casts_per_movie
        if not 1 <= lo <= hi:
            raise ValueError("casts_per_movie must be an increasing pair >= 1")


@dataclass
class SynthCorpus:
    config: SynthConfig
    records: list[MetadataRecord]
    text: np.ndarray
    image: np.ndarray
    truth: dict = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return [r.movie_id for r in self.records]


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def split_counts(n: int, fractions) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    return n_train, n_valid, n - n_train - n_valid


def generate_corpus(config: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    M = config.n_genres
    genres = list(GENRE_NAMES[:M])
    genre_weight = 1.0 / np.arange(1, M + 1) ** 0.7
    genre_weight /= genre_weight.sum()

    directors = [f"Director {i:03d}" for i in range(config.n_directors)]
    casts = [f"Cast {i:03d}" for i in range(config.n_casts)]
    dir_aff = rng.permutation(np.arange(config.n_directors) % M)
    cast_aff = rng.permutation(np.arange(config.n_casts) % M)
    dir_pool = [np.flatnonzero(dir_aff == g) for g in range(M)]
    cast_pool = [np.flatnonzero(cast_aff == g) for g in range(M)]

    proto_text = _unit_rows(rng, M, config.d_text)
    proto_image = _unit_rows(rng, M, config.d_image)

    n_train, n_valid, n_test = split_counts(config.n_movies, config.split)
    split_of = np.array(["train"] * n_train + ["valid"] * n_valid + ["test"] * n_test)
    split_of = split_of[rng.permutation(config.n_movies)]
    test_rows = np.flatnonzero(split_of == "test")
    n_fresh = int(round(config.test_unseen_fraction * len(test_rows)))
    fresh_rows = set(rng.choice(test_rows, size=n_fresh, replace=False).tolist()) if n_fresh else set()

    def draw_people(names, pool, affinity_pools, k, movie_genres):
        chosen: list[int] = []
        for _ in range(k):
            for _attempt in range(10):
                if rng.random() < config.kg_signal:
                    g = movie_genres[rng.integers(len(movie_genres))]
                    cands = affinity_pools[g] if len(affinity_pools[g]) else pool
                else:
                    cands = pool
                j = int(cands[rng.integers(len(cands))])
                if j not in chosen:
                    chosen.append(j)
                    break
        return [names[j] for j in chosen]

    records = []
    labels = np.zeros((config.n_movies, M), dtype=np.int64)
    fresh_counter = 0
    all_dirs = np.arange(config.n_directors)
    all_casts = np.arange(config.n_casts)
    for i in range(config.n_movies):
        k = int(rng.choice([1, 2, 3], p=[0.5, 0.35, 0.15]))
        movie_genres = sorted(rng.choice(M, size=min(k, M), replace=False, p=genre_weight).tolist())
        labels[i, movie_genres] = 1
        n_dir = 1 if rng.random() < 0.85 else 2
        n_cast = int(rng.integers(config.casts_per_movie[0], config.casts_per_movie[1] + 1))
        if i in fresh_rows:
            d_names = [f"New Director {fresh_counter + j:04d}" for j in range(n_dir)]
            c_names = [f"New Cast {fresh_counter + j:04d}" for j in range(n_cast)]
            fresh_counter += max(n_dir, n_cast)
        else:
            d_names = draw_people(directors, all_dirs, dir_pool, n_dir, movie_genres)
            c_names = draw_people(casts, all_casts, cast_pool, n_cast, movie_genres)
        records.append(
            MetadataRecord(
                movie_id=f"m{i:05d}",
                title=f"Movie {i:05d}",
                directors=tuple(d_names),
                casts=tuple(c_names),
                genres=tuple(genres[g] for g in movie_genres),
                split=str(split_of[i]),
            )
        )

    mix = labels / labels.sum(axis=1, keepdims=True)
    nu = config.feat_noise
    # convex blend of the prototype mixture and unit-scale isotropic noise
    text = (1 - nu) * (mix @ proto_text) + nu * rng.standard_normal((config.n_movies, config.d_text)) / np.sqrt(config.d_text)
    image = (1 - nu) * (mix @ proto_image) + nu * rng.standard_normal((config.n_movies, config.d_image)) / np.sqrt(config.d_image)

    kg = build_kg(records)
    test_recs = [r for r in records if r.split == "test"]
    unmatched = sum(1 for r in test_recs if not kg.match_people(r)[0])
    truth = {
        "config": asdict(config),
        "genres": genres,
        "split_counts": {"train": n_train, "valid": n_valid, "test": n_test},
        "director_affinity": {directors[j]: genres[int(dir_aff[j])] for j in range(config.n_directors)},
        "cast_affinity": {casts[j]: genres[int(cast_aff[j])] for j in range(config.n_casts)},
        "test_fresh_planted": len(fresh_rows),
        "test_unmatched_fraction": unmatched / len(test_recs) if test_recs else 0.0,
    }
    return SynthCorpus(config=config, records=records, text=text, image=image, truth=truth)


def write_corpus(corpus: SynthCorpus, directory: str | os.PathLike) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "metadata": directory / "metadata.jsonl",
        "text": directory / "text.feat",
        "image": directory / "image.feat",
        "truth": directory / "truth.json",
    }
    atomic_write_text(paths["metadata"], dump_metadata(corpus.records))
    write_features(paths["text"], corpus.ids, corpus.text)
    write_features(paths["image"], corpus.ids, corpus.image)
    atomic_write_text(paths["truth"], dumps_json(corpus.truth))
    return paths


def planted_kg(n_groups: int = 5, casts_per_group: int = 5, titles_per_group: int = 3, casts_per_title: int = 3, seed: int = 0):
    """Small clustered graph for link-prediction checks.

    Each group has one genre, one director, ``casts_per_group`` casts and
    ``titles_per_group`` titles; a title links only to its own group's people.
    The defaults give 50 entities.
    """
    rng = np.random.default_rng(seed)
    records = []
    for g in range(n_groups):
        offset = int(rng.integers(casts_per_group))
        for k in range(titles_per_group):
            # rotating windows cover every cast of the group
            members = [(offset + k * (casts_per_title - 1) + j) % casts_per_group for j in range(casts_per_title)]
            records.append(
                MetadataRecord(
                    movie_id=f"p{g}-{k}",
                    title=f"Title {g}-{k}",
                    directors=(f"Director {g}",),
                    casts=tuple(f"Cast {g}-{int(c)}" for c in sorted(members)),
                    genres=(f"Genre {g}",),
                    split="train",
                )
            )
    kg: DomainKG = build_kg(records)
    return kg, records
