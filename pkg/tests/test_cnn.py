from collections import Counter

import numpy as np
import pytest

from streamwork.cnn import (
    CnnConfig, TrainingError, activations, contrast_q, generate_negatives, gradient_check,
    load_model, planted_row_sum_corpus, save_model, select_contrast_pairs, train_contrastive,
    FilterRecord,
)

SMALL = dict(channels=(4, 8, 8), epochs=3, ensemble=1)


def perms(n, k, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        m = np.zeros((1, n, n))
        m[0, np.arange(n), rng.permutation(n)] = 1
        out.append(m)
    return out


def test_negative_counts_and_tags():
    negs = generate_negatives(perms(4, 10), seed=1)
    assert len(negs) == 10
    assert sorted(Counter(n.tag for n in negs).values()) == [3, 3, 4]
    assert [n.source for n in negs] == list(range(10))


def test_permutation_negatives_keep_structure():
    pos = perms(5, 9)
    for neg in generate_negatives(pos, seed=2):
        m = neg.data[0]
        assert m.shape == (5, 5)
        if neg.tag == "row_permuted":
            assert (m.sum(0) == 1).all() and (m.sum(1) == 1).all()
        if neg.tag == "position_swapped":
            assert (m.sum(1) == 1).all()
            assert not (m.sum(0) == 1).all()


def test_identity_swap_breaks_columns():
    ident = np.eye(3)[None]
    neg = generate_negatives([ident, ident], seed=0)[1]
    assert neg.tag == "position_swapped"
    assert (neg.data[0].sum(axis=1) == 1).all() and not (neg.data[0].sum(axis=0) == 1).all()


def test_negatives_reject_one_cell():
    with pytest.raises(ValueError):
        generate_negatives([np.ones((1, 1, 1))])
    with pytest.raises(ValueError):
        generate_negatives([])


def test_negatives_deterministic():
    pos = perms(4, 6)
    a = [n.data for n in generate_negatives(pos, seed=5)]
    b = [n.data for n in generate_negatives(pos, seed=5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_record_counts_per_seed():
    pos, neg, _ = planted_row_sum_corpus(24, seed=1)
    res = train_contrastive(pos, neg, CnnConfig(channels=(8, 8, 8), epochs=2, ensemble=3))
    assert len(res.records) == 54
    for seed in res.accuracy:
        recs = [r for r in res.records if r.seed == seed]
        assert Counter(r.layer for r in recs) == {0: 6, 1: 6, 2: 6}
        assert all(r.variance >= 0 and r.mean_map.shape == (4, 4) for r in recs)


def test_training_deterministic():
    pos, neg, _ = planted_row_sum_corpus(24, seed=2)
    cfg = CnnConfig(**SMALL)
    a = train_contrastive(pos, neg, cfg)
    b = train_contrastive(pos, neg, cfg)
    assert a.accuracy == b.accuracy
    for ra, rb in zip(a.records, b.records):
        assert (ra.seed, ra.layer, ra.filter) == (rb.seed, rb.layer, rb.filter)
        assert np.allclose(ra.activations, rb.activations, atol=1e-6)


def test_identical_classes_flag_no_signal():
    x = np.full((40, 1, 4, 4), 0.5)
    res = train_contrastive(x, x.copy(), CnnConfig(channels=(4, 4, 4), epochs=3, ensemble=1))
    assert res.no_signal
    assert abs(res.accuracy[0] - 0.5) <= 0.1


def test_dimension_mismatch():
    with pytest.raises(TrainingError, match="dimension"):
        train_contrastive(np.zeros((4, 1, 3, 3)), np.zeros((4, 1, 4, 4)), CnnConfig(**SMALL))


def test_activation_maps_pure(tmp_path):
    pos, neg, _ = planted_row_sum_corpus(24, seed=3)
    cfg = CnnConfig(**SMALL)
    res = train_contrastive(pos, neg, cfg)
    model = res.models[0]
    a1 = activations(model, pos[:5])
    a2 = activations(model, pos[:5])
    assert all(np.array_equal(x, y) for x, y in zip(a1, a2))
    # batch composition does not change a sample's activations
    single = activations(model, pos[:1])
    assert np.allclose(single[2][0], a1[2][0], atol=1e-5)
    save_model(tmp_path / "m.pt", model, cfg, 1)
    back, cfg2 = load_model(tmp_path / "m.pt")
    assert cfg2 == cfg
    assert np.allclose(activations(back, pos[:5])[2], a1[2], atol=1e-6)


def rec(acts):
    acts = np.asarray(acts, dtype=float)
    return FilterRecord(0, 0, 0, acts, float(acts.var()), np.zeros((2, 2)))


def test_contrast_pairs():
    ids = ["1", "2", "3", "4", "5", "6"]
    (pair,) = select_contrast_pairs([rec([0.9, 0.8, 0.7, 0.1, 0.2, 0.3])], ids)
    assert pair.high == ["1", "2", "3"] and pair.low == ["4", "5", "6"]
    assert not pair.degenerate
    (flat,) = select_contrast_pairs([rec([0.5] * 6)], ids)
    assert flat.degenerate and not set(flat.high) & set(flat.low)
    with pytest.raises(ValueError):
        select_contrast_pairs([rec([1.0] * 5)], ids[:5])
    assert contrast_q(100) == 5 and contrast_q(10) == 3 and contrast_q(101) == 6


def test_planted_analogue_separates_groups():
    # a filter tracking ascending-pairs puts high counts in the high group
    rng = np.random.default_rng(0)
    asc = rng.integers(20, 32, size=60).astype(float)
    ids = [f"s{i}" for i in range(60)]
    (pair,) = select_contrast_pairs([rec(0.1 * asc + 0.01 * rng.random(60))], ids)
    high = [asc[ids.index(i)] for i in pair.high]
    low = [asc[ids.index(i)] for i in pair.low]
    assert min(high) > max(low)


def test_planted_corpus_separable_by_row_sums():
    pos, neg, sums = planted_row_sum_corpus(64, seed=4)
    pos_std = pos[:, 0].sum(axis=2).std(axis=1)
    neg_std = neg[:, 0].sum(axis=2).std(axis=1)
    assert (pos_std == 0).all() and (neg_std > 0).all()
    assert np.allclose(pos[:, 0].sum(axis=2)[:, 0] * 4, sums)


def test_gradient_check():
    assert gradient_check(seed=0) <= 1e-4
