import math

import numpy as np
import pytest

from streamwork.cnn import FilterRecord
from streamwork.correlate import correlate, pearson, rank_properties
from streamwork.props import PropertyVector, classify_properties


def direct_r(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def test_known_vectors():
    assert pearson([1, 2, 3, 4], [2, 4, 6, 9]) == pytest.approx(direct_r([1, 2, 3, 4], [2, 4, 6, 9]),
                                                                  abs=1e-12)
    assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)
    assert math.isnan(pearson([1, 1, 1], [1, 2, 3]))


def test_random_pairs_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 30))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert abs(pearson(x, y) - direct_r(list(x), list(y))) <= 1e-9
        a, b = rng.uniform(0.1, 10), rng.uniform(-10, 10)
        assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-9


def rec(ref_filter, acts):
    acts = np.asarray(acts, dtype=float)
    return FilterRecord(0, 0, ref_filter, acts, float(acts.var()), np.zeros((1, 1)))


def vectors(table):
    n = len(next(iter(table.values())))
    return [PropertyVector(f"s{i}", {k: v[i] for k, v in table.items()}) for i in range(n)]


def test_matrix_and_top3():
    props = {"a": [1, 2, 3, 4, 5], "b": [5, 3, 4, 1, 2], "c": [7, 7, 7, 7, 7]}
    recs = [rec(i, acts) for i, acts in enumerate(
        [[1, 2, 3, 4, 5], [5, 4, 3, 2, 1], [1, 3, 2, 5, 4], [2, 2, 2, 2, 3]])]
    m = correlate(recs, vectors(props))
    assert m.get("s0/L0/f0", "a") == pytest.approx(1.0)
    assert m.get("s0/L0/f1", "a") == pytest.approx(-1.0)
    assert math.isnan(m.get("s0/L0/f0", "c"))
    assert ("s0/L0/f0", "c") in m.undefined()
    top = m.top["a"]
    assert len(top) == 3 and [f for f, _ in top[:2]] == ["s0/L0/f0", "s0/L0/f1"]
    assert m.top["c"] == []
    assert np.all(np.abs(m.r[~np.isnan(m.r)]) <= 1)


def test_mismatch_errors():
    with pytest.raises(ValueError):
        correlate([rec(0, [1, 2, 3])], vectors({"a": [1, 2, 3, 4]}))
    with pytest.raises(ValueError):
        correlate([rec(0, [1, 2, 3])], vectors({"a": [1, 2, 3]}), solution_ids=["x", "y", "z"])


def test_ranking_order_and_implied():
    props = {"strong": [1, 2, 3, 4, 5, 6], "weak": [1, 3, 2, 2, 3, 1],
             "const": [4, 4, 4, 4, 4, 4]}
    recs = [rec(0, [1, 2.1, 2.9, 4.2, 5, 6.1])]
    vecs = vectors(props)
    ranked = rank_properties(correlate(recs, vecs), classify_properties(vecs))
    assert [r.id for r in ranked] == ["strong", "weak", "const"]
    assert ranked[-1].tag == "implied"
    assert ranked[0].score > ranked[1].score


def test_ranking_097_above_085():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    noise = rng.normal(size=200)

    def mix(target):
        # y = x + c * noise with corr(x, y) close to target
        for c in np.linspace(0, 3, 3001):
            if pearson(x, x + c * noise) <= target:
                return x + c * noise

    vecs = vectors({"p85": list(mix(0.85)), "p97": list(mix(0.97))})
    ranked = rank_properties(correlate([rec(0, x)], vecs), classify_properties(vecs))
    assert [r.id for r in ranked] == ["p97", "p85"]


def test_empty_filters_fallback():
    vecs = vectors({"wide": [1, 50, 100], "narrow": [1.0, 1.01, 1.0], "const": [2, 2, 2]})
    ranked = rank_properties(correlate([], vecs), classify_properties(vecs))
    assert [r.id for r in ranked] == ["narrow", "wide", "const"]
    assert ranked[0].tag == "near_constant" and ranked[0].score is None
