from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idkg.errors import IDKGError
from idkg.kg import DomainKG, EntityKind, MetadataRecord, build_kg
from idkg.kge import (
    MODELS,
    KgeConfig,
    KgModelParams,
    corrupt_batch,
    corrupt_triple,
    eval_link_prediction,
    init_params,
    load_embeddings,
    margin_loss,
    save_embeddings,
    score,
    score_grad,
    score_triple,
    split_triples,
    train_embeddings,
)
from idkg.numerics import grad_check
from idkg.synthdata import planted_kg


def two_movie_kg():
    return build_kg(
        [
            MetadataRecord("a", "Alpha", ("D1",), ("C1",), ("G1",), "train"),
            MetadataRecord("b", "Beta", ("D2",), ("C2",), ("G2",), "train"),
        ]
    )


def random_params(model, rng, n=6, dim=4, n_rel=3):
    return init_params(model, n, dim, rng, n_relations=n_rel)


# -- scores ------------------------------------------------------------------


def test_transh_hand_example():
    P = KgModelParams(
        "TransH",
        entity=np.array([[1.0, 2.0], [5.0, 2.0]]),
        relation=np.zeros((1, 2)),
        extras={"normal": np.array([[1.0, 0.0]])},
    )
    assert score_triple(P, (0, 0, 1)) == 0.0


def test_rotate_zero_phase_is_euclidean_per_pair():
    P = KgModelParams("RotatE", entity=np.array([[3.0, 4.0], [0.0, 0.0]]), relation=np.zeros((1, 1)))
    assert score_triple(P, (0, 0, 1)) == pytest.approx(5.0, abs=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_translation_identity(model, rng):
    P = random_params(model, rng, n=2)
    h = P.entity[0]
    if model == "TransE":
        P.entity[1] = h + P.relation[0]
    elif model == "TransH":
        n = P.extras["normal"][0]
        e = h - P.entity[1]
        P.relation[0] = -(e - (n @ e) * n)
    elif model == "TransR":
        P.extras["proj"][0] = rng.normal(size=(4, 4))
        P.relation[0] = -P.extras["proj"][0] @ (h - P.entity[1])
    else:
        rot = np.cos(P.relation[0]) + 1j * np.sin(P.relation[0])
        t = (h[0::2] + 1j * h[1::2]) * rot
        P.entity[1, 0::2], P.entity[1, 1::2] = t.real, t.imag
    assert score_triple(P, (0, 0, 1)) == pytest.approx(0.0, abs=1e-9)


@given(st.sampled_from(MODELS), st.integers(0, 2**32 - 1))
def test_scores_are_non_negative(model, seed):
    rng = np.random.default_rng(seed)
    P = random_params(model, rng)
    P.entity *= rng.uniform(0.1, 10)
    h, r, t = rng.integers(6, size=20), rng.integers(3, size=20), rng.integers(6, size=20)
    assert np.all(score(P, h, r, t) >= 0)


def test_score_triple_bounds():
    P = init_params("TransE", 3, 2, np.random.default_rng(0))
    with pytest.raises(IndexError):
        score_triple(P, (0, 0, 3))


@pytest.mark.parametrize("model", MODELS)
def test_score_gradients(model, rng):
    P = random_params(model, rng)
    h, r, t = rng.integers(6, size=8), rng.integers(3, size=8), rng.integers(6, size=8)
    w = rng.normal(size=8)
    arrays = P.arrays()

    def f(_):
        return float(w @ score(P, h, r, t))

    assert grad_check(f, arrays, score_grad(P, h, r, t, w)) < 1e-4


@pytest.mark.parametrize("model", MODELS)
def test_margin_loss_gradient(model, rng):
    P = random_params(model, rng)
    # heads and tails from disjoint halves so no coordinate sits on an |x| kink by cancellation
    pos = np.stack([rng.integers(3, size=5), rng.integers(3, size=5), rng.integers(3, 6, size=5)], axis=1)
    neg = np.stack([rng.integers(3, size=10), rng.integers(3, size=10), rng.integers(3, 6, size=10)], axis=1).reshape(5, 2, 3)
    loss, grads = margin_loss(P, pos, neg, margin=5.0)
    assert loss > 0
    assert grad_check(lambda _: margin_loss(P, pos, neg, 5.0)[0], P.arrays(), grads) < 1e-4


def test_margin_loss_is_zero_when_negatives_are_far():
    P = KgModelParams("TransE", entity=np.array([[0.0], [1.0], [50.0]]), relation=np.array([[1.0]]))
    loss, grads = margin_loss(P, np.array([[0, 0, 1]]), np.array([[[0, 0, 2]]]), margin=1.0)
    assert loss == 0.0
    assert all(not g.any() for g in grads.values())


# -- corruption ---------------------------------------------------------------


def test_corruption_keeps_kind_and_avoids_known(rng):
    kg, _ = planted_kg()
    for triple in kg.triples[:40]:
        (h, r, t), flagged = corrupt_triple(kg, triple, rng)
        assert not flagged
        assert (h, r, t) not in kg.triple_set
        assert kg.kind_of(h) == kg.kind_of(int(triple[0]))
        assert kg.kind_of(t) == kg.kind_of(int(triple[2]))


def test_corruption_is_deterministic():
    kg, _ = planted_kg()
    a = [corrupt_triple(kg, tr, np.random.default_rng(3)) for tr in kg.triples]
    b = [corrupt_triple(kg, tr, np.random.default_rng(3)) for tr in kg.triples]
    assert a == b
    x, _ = corrupt_batch(kg, kg.triples, np.random.default_rng(5))
    y, _ = corrupt_batch(kg, kg.triples, np.random.default_rng(5))
    assert np.array_equal(x, y)


def test_head_tail_coin_is_fair():
    kg, _ = planted_kg()
    rng = np.random.default_rng(0)
    triple = kg.triples[0]
    heads = sum(corrupt_triple(kg, triple, rng)[0][0] != triple[0] for _ in range(10_000))
    assert abs(heads / 10_000 - 0.5) < 0.02


def test_single_member_kind_collision_is_flagged(rng):
    kg = build_kg([MetadataRecord("a", "A", ("D",), ("C",), ("G",), "train")])
    _, flagged = corrupt_triple(kg, kg.triples[0], rng)
    assert flagged
    _, mask = corrupt_batch(kg, kg.triples, rng)
    assert mask.all()


def test_batch_corruption_matches_kind_rule(rng):
    kg, _ = planted_kg()
    neg, flagged = corrupt_batch(kg, kg.triples, rng)
    assert not flagged.any()
    assert np.array_equal(kg.kind_codes[neg[:, 0]], kg.kind_codes[kg.triples[:, 0]])
    assert np.array_equal(kg.kind_codes[neg[:, 2]], kg.kind_codes[kg.triples[:, 2]])
    assert not set(map(tuple, neg.tolist())) & kg.triple_set


def test_corrupting_empty_graph_fails(rng):
    with pytest.raises(IDKGError):
        corrupt_triple(DomainKG(), (0, 0, 0), rng)


# -- training -----------------------------------------------------------------


def test_tiny_graph_separates_positives_from_negatives():
    kg = two_movie_kg()
    P, history = train_embeddings(kg, KgeConfig(model="TransE", dim=4, epochs=200, batch_size=4, lr=0.05, margin=1.0))
    pos = score(P, kg.triples[:, 0], kg.triples[:, 1], kg.triples[:, 2]).mean()
    neg, _ = corrupt_batch(kg, np.repeat(kg.triples, 20, axis=0), np.random.default_rng(1))
    assert pos < score(P, neg[:, 0], neg[:, 1], neg[:, 2]).mean()
    assert history[-1] < history[0]


def test_initial_loss_bounded_by_margin_at_small_scale():
    kg = two_movie_kg()
    P = init_params("TransE", kg.n_entities, 4, np.random.default_rng(0))
    P.entity *= 1e-3
    P.relation *= 1e-3
    neg, _ = corrupt_batch(kg, kg.triples, np.random.default_rng(0))
    loss, _ = margin_loss(P, kg.triples, neg[:, None, :], margin=1.0)
    assert np.isfinite(loss) and loss <= 1.0 + 1e-2


@pytest.mark.parametrize("model", MODELS)
def test_training_is_bit_identical_and_on_f32_grid(model):
    kg = two_movie_kg()
    cfg = KgeConfig(model=model, dim=4, epochs=5, batch_size=4, seed=7)
    a, ha = train_embeddings(kg, cfg)
    b, hb = train_embeddings(kg, cfg)
    assert ha == hb
    for name, arr in a.arrays().items():
        assert np.array_equal(arr, b.arrays()[name])
        assert np.array_equal(arr, arr.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize("model", MODELS)
def test_training_keeps_constraints(model):
    kg = two_movie_kg()
    P, _ = train_embeddings(kg, KgeConfig(model=model, dim=4, epochs=3, batch_size=4))
    assert np.allclose(np.linalg.norm(P.entity, axis=1), 1.0, atol=1e-6)
    if model == "TransH":
        assert np.allclose(np.linalg.norm(P.extras["normal"], axis=1), 1.0, atol=1e-6)
    if model == "TransR":
        assert np.all(np.linalg.norm(P.extras["proj"], ord=2, axis=(1, 2)) <= 1.0 + 1e-6)


def test_training_rejects_empty_graph():
    with pytest.raises(IDKGError):
        train_embeddings(DomainKG(), KgeConfig(epochs=1))


@pytest.mark.parametrize(
    "kwargs", [{"model": "ConvE"}, {"model": "RotatE", "dim": 3}, {"margin": 0}, {"negatives": 0}, {"dim": 0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        KgeConfig(**kwargs)


# -- evaluation ---------------------------------------------------------------


def single_movie_transe():
    kg = build_kg([MetadataRecord("a", "A", ("D",), ("C",), ("G",), "train")])
    rng = np.random.default_rng(0)
    entity = rng.normal(size=(kg.n_entities, 3))
    relation = np.zeros((6, 3))
    for h, r, t in kg.triples.tolist():
        relation[r] = entity[t] - entity[h]
    return kg, KgModelParams("TransE", entity, relation)


def test_perfect_ranking():
    kg, P = single_movie_transe()
    out = eval_link_prediction(kg, P, kg.triples, k=1, candidates="all")
    assert out["hits@1"] == 1.0 and out["mrr"] == 1.0


def test_second_place_gives_half_mrr():
    kg, _ = single_movie_transe()
    h, r, t = kg.triples[0].tolist()
    entity = np.full((kg.n_entities, 1), 10.0)
    entity[[e for e in range(kg.n_entities) if e not in (h, t)], 0] = [10.0, 20.0]
    entity[h, 0], entity[t, 0] = 0.0, 1.0
    P = KgModelParams("TransE", entity, np.zeros((6, 1)))
    out = eval_link_prediction(kg, P, kg.triples[:1], k=1, filtered=False, candidates="all")
    assert out["mrr"] == 0.5 and out["hits@1"] == 0.0


def test_filtering_removes_other_true_answers():
    kg, _ = single_movie_transe()
    h, r, t = kg.triples[0].tolist()
    entity = np.zeros((kg.n_entities, 1))
    entity[t, 0] = 1.0
    # every other entity ties h+r exactly; only the filtered protocol can ignore them if they are known
    P = KgModelParams("TransE", entity, np.zeros((6, 1)))
    known = {(h, r, e) for e in range(kg.n_entities)} | {(e, r, t) for e in range(kg.n_entities)}
    out = eval_link_prediction(kg, P, [(h, r, t)], k=1, candidates="all", known=known)
    assert out["mrr"] == 1.0


def test_random_embeddings_hit_chance_level():
    kg, _ = planted_kg()
    assert kg.n_entities == 50
    hits, queries = [], 0
    for seed in range(4):
        P = init_params("TransE", kg.n_entities, 16, np.random.default_rng(seed))
        out = eval_link_prediction(kg, P, kg.triples, filtered=False, candidates="all")
        hits.append(out["hits@10"] * out["queries"])
        queries += out["queries"]
    assert queries >= 500
    assert abs(sum(hits) / queries - 0.2) < 0.05


def test_eval_rejects_empty_test_set():
    kg, P = single_movie_transe()
    with pytest.raises(IDKGError):
        eval_link_prediction(kg, P, np.zeros((0, 3)))


def test_split_keeps_every_entity_in_training():
    kg, _ = planted_kg()
    train, test = split_triples(kg, 0.15, np.random.default_rng(0))
    assert train.n_triples + len(test) == kg.n_triples
    assert np.all(train.degree > 0)
    assert not set(map(tuple, test.tolist())) & train.triple_set


def test_embedding_checkpoint_round_trip(tmp_path):
    kg = two_movie_kg()
    cfg = KgeConfig(model="TransH", dim=4, epochs=2, batch_size=4)
    P, _ = train_embeddings(kg, cfg)
    manifest = save_embeddings(P, tmp_path / "emb", cfg, kg, kg_hash="abc")
    assert {"model", "dim", "seed", "epochs"} <= set(manifest)
    back, m2 = load_embeddings(tmp_path / "emb")
    assert back.model == "TransH" and m2["kg_hash"] == "abc"
    for name, arr in P.arrays().items():
        assert np.array_equal(back.arrays()[name], arr)


def test_load_embeddings_missing(tmp_path):
    with pytest.raises(IDKGError, match="nope"):
        load_embeddings(tmp_path / "nope")


def test_members_are_typed():
    kg = two_movie_kg()
    assert len(kg.members(EntityKind.TITLE)) == 2
