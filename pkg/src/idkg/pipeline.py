"""End-to-end orchestration shared by the CLI, the ablation and the τ sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IDKGError
from .gcacl import random_genre_rows
from .kg import CorpusStats, DomainKG, EntityKind, MetadataRecord, build_kg, corpus_stats
from .kge import KgeConfig, KgModelParams, train_embeddings
from .kgfeature import collect_entities, kg_feature_matrix, pseudo_label
from .metrics import MetricsReport, f1_report
from .synthdata import SynthCorpus
from .train import IDKGModel, SampleSet, TrainConfig, fit, predict_labels

log = logging.getLogger(__name__)

# Stage-1 settings for desk-scale corpora (the KGE module keeps its own defaults).
DESK_KGE = KgeConfig(model="RotatE", dim=32, epochs=100, batch_size=100, lr=0.5, margin=1.0)
# Stage 2 at desk scale: 300 train samples give 5 steps per epoch, so the
# epoch count is raised to give the attention teacher enough updates.
DESK_TRAIN = TrainConfig(epochs=50)

VARIANTS = {
    "full": {},
    "-AT": {"atten": False},
    "-G-CACL": {"contra": False},
    "-AT-G-CACL": {"atten": False, "contra": False},
    "-KG": {"atten": False, "contra": False, "use_kg": False},
}


def genre_vocabulary(kg: DomainKG) -> list[str]:
    return [kg.entities[j][1] for j in kg.members(EntityKind.GENRE)]


def genre_rows(kg: DomainKG, entity_matrix: np.ndarray) -> np.ndarray:
    return entity_matrix[kg.members(EntityKind.GENRE)]


def label_matrix(records: list[MetadataRecord], genres: list[str]) -> np.ndarray:
    """Binary labels over ``genres``; genres never seen in training are dropped."""
    pos = {g: j for j, g in enumerate(genres)}
    out = np.zeros((len(records), len(genres)), dtype=np.int64)
    for i, rec in enumerate(records):
        for g in rec.genres:
            j = pos.get(g)
            if j is not None:
                out[i, j] = 1
    return out


def _align(ids: list[str], feat_ids: list[str], matrix: np.ndarray, name: str) -> np.ndarray:
    pos = {k: i for i, k in enumerate(feat_ids)}
    missing = [k for k in ids if k not in pos]
    if missing:
        raise IDKGError(f"{len(missing)} samples lack {name} features (first: {missing[0]})")
    return matrix[[pos[k] for k in ids]]


def build_samples(
    records: list[MetadataRecord],
    text: tuple[list[str], np.ndarray],
    image: tuple[list[str], np.ndarray],
    kg: DomainKG,
    entity_matrix: np.ndarray,
    stats: CorpusStats,
    genres: list[str],
) -> SampleSet:
    ids = [r.movie_id for r in records]
    matches = [collect_entities(r, kg) for r in records]
    kg_feat, present = kg_feature_matrix(matches, entity_matrix)
    return SampleSet(
        ids=ids,
        text=_align(ids, *text, "text"),
        image=_align(ids, *image, "image"),
        kg=kg_feat,
        present=present,
        pseudo=np.array([pseudo_label(m, stats) for m in matches]),
        labels=label_matrix(records, genres),
    )


@dataclass
class Prepared:
    """Stage-1 outputs plus per-split sample sets."""

    kg: DomainKG
    embeddings: KgModelParams
    stats: CorpusStats
    genres: list[str]
    splits: dict[str, SampleSet] = field(default_factory=dict)
    kge_history: list[float] = field(default_factory=list)


def prepare_from_parts(records, text, image, kg, embeddings, stats) -> Prepared:
    genres = genre_vocabulary(kg)
    prep = Prepared(kg=kg, embeddings=embeddings, stats=stats, genres=genres)
    for split in ("train", "valid", "test"):
        recs = [r for r in records if r.split == split]
        if recs:
            prep.splits[split] = build_samples(recs, text, image, kg, embeddings.entity, stats, genres)
    return prep


def prepare(corpus: SynthCorpus, kge_config: KgeConfig = DESK_KGE) -> Prepared:
    """Build the KG, train stage 1 and assemble sample sets for a synthetic corpus."""
    kg = build_kg(corpus.records)
    stats = corpus_stats(corpus.records, kg)
    P, history = train_embeddings(kg, kge_config)
    ids = corpus.ids
    prep = prepare_from_parts(corpus.records, (ids, corpus.text), (ids, corpus.image), kg, P, stats)
    prep.kge_history = history
    return prep


def make_model(prep: Prepared, config: TrainConfig) -> IDKGModel:
    rows = genre_rows(prep.kg, prep.embeddings.entity)
    if config.genre_init == "random":
        rows = random_genre_rows(rows.shape[0], rows.shape[1], np.random.default_rng([config.seed, 2]))
    train = prep.splits["train"]
    dims = {"text": train.text.shape[1], "image": train.image.shape[1], "kg": train.kg.shape[1]}
    return IDKGModel(config, dims, rows, prep.genres)


def evaluate(model: IDKGModel, samples: SampleSet, threshold: float | None = None) -> MetricsReport:
    pred = predict_labels(model, samples, threshold)
    truth = [set(np.flatnonzero(row).tolist()) for row in samples.labels]
    return f1_report(pred, truth, len(model.genres), model.genres)


def gate_summary(model: IDKGModel, samples: SampleSet) -> dict:
    """Mean KG gate against pseudo-labels, split by whether any entity matched."""
    if "kg" not in model.modalities:
        return {}
    a = model.gates(samples)["kg"].mean(axis=1)
    gap = np.abs(a - samples.pseudo)
    out = {"mean_gap": float(gap.mean()), "mean_gate": float(a.mean())}
    empty = ~samples.present
    out["empty_fraction"] = float(empty.mean())
    if empty.any():
        out["mean_gate_empty"] = float(a[empty].mean())
    return out


def run_stage2(prep: Prepared, config: TrainConfig, eval_split: str = "test"):
    model = make_model(prep, config)
    history = fit(model, prep.splits["train"])
    report = evaluate(model, prep.splits[eval_split])
    return model, history, report


def run_ablation(prep: Prepared, config: TrainConfig, variants=None, eval_split: str = "test") -> dict[str, MetricsReport]:
    out = {}
    for name in variants or VARIANTS:
        if name not in VARIANTS:
            raise IDKGError(f"unknown ablation variant {name!r}")
        cfg = replace(config, **VARIANTS[name])
        _, _, out[name] = run_stage2(prep, cfg, eval_split)
        log.info("variant %s micro-F1 %.4f", name, out[name].micro_f1)
    return out


TAU_GRID = (0.05, 0.1, 0.3, 0.5, 0.7, 0.9)


def run_tau_sweep(prep: Prepared, config: TrainConfig, taus=TAU_GRID, eval_split: str = "test") -> dict[float, MetricsReport]:
    out = {}
    for tau in taus:
        _, _, out[float(tau)] = run_stage2(prep, replace(config, tau=float(tau)), eval_split)
        log.info("tau %.2f micro-F1 %.4f", tau, out[float(tau)].micro_f1)
    return out
