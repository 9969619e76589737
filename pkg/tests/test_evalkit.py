import logging

import numpy as np
import pytest

from edda.edmodel import EDModel, ModelSpec, init_model
from edda.encoders import EmbeddingTable
from edda.evalkit import (
    auc,
    auc_from_scored_cases,
    build_cases,
    domain_size,
    evaluate_all,
    format_report,
    out_of_domain_interaction,
    recall_at_1,
    recall_at_1_from_scored_cases,
    split,
)
from edda.mdgraph import NodeId, NodeKind, ingest

from oracles import pairwise_auc, random_bipartite_records

U = lambda i: NodeId(NodeKind.USER, i)
I = lambda i: NodeId(NodeKind.ITEM, i)


def test_split_ten_interactions_is_7_1_2():
    records = [(0, 0, i) for i in range(10)]
    sp = split(ingest(records), seed=0)
    assert sp.train.graph(0).n_edges == 7
    assert len(sp.validation[0]) == 1
    assert len(sp.test[0]) == 2


def test_split_single_interaction_goes_to_train():
    sp = split(ingest([(0, 0, 0), (0, 1, 1), (0, 1, 2)]), seed=0)
    assert (0, 0, 0) in sp.train.records()


def test_split_partitions_each_domain():
    rng = np.random.default_rng(0)
    records = random_bipartite_records(rng, 0, 12, 20, 150)
    records += random_bipartite_records(rng, 1, 8, 10, 60)
    ds = ingest(records)
    sp = split(ds, seed=1)
    for d, graph in enumerate(ds.domains):
        train_pairs = {(u, i) for dd, u, i in sp.train.records() if dd == d}
        val_pairs = {tuple(row) for row in sp.validation[d]}
        test_pairs = {tuple(row) for row in sp.test[d]}
        full_pairs = {(int(u), int(i)) for u, i in graph.user_item_pairs()}
        assert train_pairs | val_pairs | test_pairs == full_pairs
        assert not (train_pairs & val_pairs)
        assert not (train_pairs & test_pairs)
        assert not (val_pairs & test_pairs)
        # every user keeps a training interaction
        assert set(sp.train.graph(d).user_ids) == set(graph.user_ids)


def test_split_determinism():
    records = [(0, u, i) for u in range(5) for i in range(6)]
    ds = ingest(records)
    a, b = split(ds, seed=3), split(ds, seed=3)
    assert a.train.records() == b.train.records()
    assert all(np.array_equal(x, y) for x, y in zip(a.validation, b.validation))
    c = split(ds, seed=4)
    assert a.train.records() != c.train.records()


def _eval_fixture():
    # user 0 is the only evaluated user; users 1..14 hold one training
    # interaction each, so items 12..25 are clean negatives for user 0
    records = [(0, 0, i) for i in range(12)]
    records += [(0, u, 11 + u) for u in range(1, 15)]
    ds = ingest(records)
    sp = split(ds, seed=0)
    return ds, sp


def _mf_model_with_item_scores(ds, item_value):
    """MF model with user rows = 1, intra zeroed, item rows set per id."""
    spec = ModelSpec(d_inter=1, d_intra=1, encoder="mf", init_scale=0.0)
    model = init_model(spec, ds, seed=0)
    rows = np.array(
        [[item_value(n.id)] if n.kind == NodeKind.ITEM else [1.0] for n in ds.all_nodes]
    )
    model.inter = EmbeddingTable(ds.all_nodes, rows)
    return model


def test_auc_and_recall_extremes():
    ds, sp = _eval_fixture()
    test_items = {int(i) for _, i in sp.test[0]}

    best = _mf_model_with_item_scores(ds, lambda i: 1.0 if i in test_items else -1.0)
    assert auc(best, ds, sp, 0) == 1.0
    assert recall_at_1(best, ds, sp, 0) == 1.0

    worst = _mf_model_with_item_scores(ds, lambda i: -1.0 if i in test_items else 1.0)
    assert auc(worst, ds, sp, 0) == 0.0
    assert recall_at_1(worst, ds, sp, 0) == 0.0


def test_auc_all_ties_is_half():
    ds, sp = _eval_fixture()
    zero = init_model(ModelSpec(d_inter=2, d_intra=2, init_scale=0.0), ds, seed=0)
    assert auc(zero, ds, sp, 0) == 0.5


def test_tied_top_score_with_lower_id_negative_is_a_miss():
    tied = np.zeros(10)
    ids_above = np.arange(1, 11)
    # positive id 0 wins every tie; positive id 5 loses to negative id 2
    assert recall_at_1_from_scored_cases([(0.0, 0, tied, ids_above)]) == 1.0
    ids_mixed = np.array([2, 7, 8, 9, 10, 11, 12, 13, 14, 15])
    assert recall_at_1_from_scored_cases([(0.0, 5, tied, ids_mixed)]) == 0.0

    # model level: all-zero scores tie everywhere; in this fixture the
    # positive always carries the smallest id, so every tie is a hit
    ds, sp = _eval_fixture()
    zero = init_model(ModelSpec(d_inter=2, d_intra=2, init_scale=0.0), ds, seed=0)
    cases = build_cases(sp, 0, "test")
    assert all(case.positive.id < min(n.id for n in case.negatives) for case in cases)
    assert recall_at_1(zero, ds, sp, 0) == 1.0


def test_auc_matches_pairwise_oracle_with_one_inversion():
    scored = [
        (0, 3.0, np.array([0.5])),
        (0, 2.0, np.array([2.5])),  # the inversion
        (0, 4.0, np.array([1.0])),
    ]
    got = auc_from_scored_cases(scored)
    want = pairwise_auc([3.0, 2.0, 4.0], [0.5, 2.5, 1.0])
    assert got == want == pytest.approx(8 / 9)


@pytest.mark.parametrize("seed", range(8))
def test_metrics_match_bruteforce_oracles_exactly(seed):
    rng = np.random.default_rng(seed)
    n_cases = int(rng.integers(1, 50))
    scored_auc = []
    scored_recall = []
    for _ in range(n_cases):
        user = int(rng.integers(6))
        # integer scores force ties with positive probability
        pos = float(rng.integers(0, 6))
        negs = rng.integers(0, 6, size=10).astype(float)
        pos_id = int(rng.integers(100))
        neg_ids = rng.choice(np.setdiff1d(np.arange(100), [pos_id]), 10, replace=False)
        scored_auc.append((user, pos, negs))
        scored_recall.append((pos, pos_id, negs, neg_ids))

    by_user = {}
    for user, pos, negs in scored_auc:
        by_user.setdefault(user, ([], []))
        by_user[user][0].append(pos)
        by_user[user][1].extend(negs.tolist())
    expected_auc = np.mean(
        [pairwise_auc(p, n) for _, (p, n) in sorted(by_user.items())]
    )
    assert auc_from_scored_cases(scored_auc) == expected_auc

    hits = 0
    for pos, pos_id, negs, neg_ids in scored_recall:
        top = sorted(
            [(pos, pos_id)] + list(zip(negs, neg_ids)), key=lambda t: (-t[0], t[1])
        )[0]
        hits += top[1] == pos_id
    assert recall_at_1_from_scored_cases(scored_recall) == hits / n_cases


def test_random_scores_recall_near_one_eleventh():
    rng = np.random.default_rng(9)
    n = 20_000
    scored = [
        (float(rng.random()), 0, rng.random(10), np.arange(1, 11)) for _ in range(n)
    ]
    assert recall_at_1_from_scored_cases(scored) == pytest.approx(1 / 11, abs=0.01)


def test_metrics_invariant_under_monotone_transform():
    rng = np.random.default_rng(10)
    scored = [
        (int(rng.integers(4)), float(rng.normal()), rng.normal(size=10))
        for _ in range(40)
    ]
    def transform(x):
        return np.exp(2.0 * np.asarray(x)) + 1.0
    transformed = [(u, float(transform(p)), transform(n)) for u, p, n in scored]
    assert auc_from_scored_cases(scored) == pytest.approx(
        auc_from_scored_cases(transformed)
    )


def test_eval_cases_invariants_and_freezing():
    ds, sp = _eval_fixture()
    cases = build_cases(sp, 0, "test", eval_seed=5)
    positives = ds.graph(0).user_positive_sets()
    for case in cases:
        assert len(case.negatives) == 10
        assert len(set(case.negatives)) == 10
        assert case.positive not in case.negatives
        for neg in case.negatives:
            assert neg.id not in positives[case.user.id]
    again = build_cases(sp, 0, "test", eval_seed=5)
    assert cases == again
    different = build_cases(sp, 0, "test", eval_seed=6)
    assert cases != different


def test_eval_cases_skip_user_without_negatives(caplog):
    # domain has 11 items; user 0 interacted with 2, leaving only 9 eligible
    records = [(0, 0, 0), (0, 0, 1)] + [(0, 1, i) for i in range(2, 11)]
    ds = ingest(records)
    sp = split(ds, seed=0)
    sp.test[0] = np.array([[0, 1]])
    with caplog.at_level(logging.WARNING):
        cases = build_cases(sp, 0, "test")
    assert cases == []
    assert any("eligible negatives" in rec.message for rec in caplog.records)


def test_domain_size():
    ds = ingest([(0, 0, 0)] * 1 + [(0, 0, i) for i in range(3)] + [(1, 0, i) for i in range(7)])
    assert domain_size(ds, 0) == pytest.approx(0.3)
    assert domain_size(ds, 1) == pytest.approx(0.7)
    assert domain_size(ingest([(0, 0, 0)]), 0) == 1.0
    assert sum(domain_size(ds, d) for d in range(2)) == 1.0


def test_out_of_domain_interaction():
    # user 0: 2 interactions in domain 0, 4 elsewhere -> 4 / 2 = 2.0
    records = [(0, 0, 0), (0, 0, 1)] + [(1, 0, i) for i in range(4)]
    ds = ingest(records)
    assert out_of_domain_interaction(ds, 0) == pytest.approx(2.0)
    assert out_of_domain_interaction(ds, 1) == pytest.approx(0.5)

    lonely = ingest([(0, 0, 0), (1, 1, 1)])
    assert out_of_domain_interaction(lonely, 0) == 0.0
    assert out_of_domain_interaction(ingest([(0, 0, 0)]), 0) == 0.0


def test_report_format():
    rows = [(0, 0.9, 0.5, 10), (1, 0.7, 0.3, 20)]
    text = format_report(rows)
    lines = text.strip().split("\n")
    assert len(lines) == 4  # header + 2 domains + AVG
    assert lines[-1].startswith("AVG\t0.800000\t0.400000\t30")


def test_evaluate_all_row_count():
    ds, sp = _eval_fixture()
    model = init_model(ModelSpec(d_inter=2, d_intra=2), ds, seed=1)
    rows = evaluate_all(model, sp)
    assert len(rows) == ds.num_domains
    text = format_report(rows)
    assert len(text.strip().split("\n")) == ds.num_domains + 2
