import math
import statistics

import numpy as np
import pytest

from streamwork.corpus import BuiltinBackend
from streamwork.encode import encode_all
from streamwork.minicp import evaluate, parse_constraint
from streamwork.minicp.parser import parse_expression
from streamwork.problems import BUILTIN, builtin_problem
from streamwork.props import (
    PropertyError, PropertyVector, catalog, classify_properties, compute_all,
    progression_table, property_exprs, summarize,
)


def corpus(name, iid, limit=60):
    prob = builtin_problem(name)
    out = BuiltinBackend().solve(prob, iid, mode="enumerate", limit=limit, budget=30)
    return prob, out.solutions, encode_all(prob, out.solutions)


@pytest.mark.parametrize("kind", ["matrix", "assignment", "permutation", "packing_coords"])
def test_catalog_size(kind):
    ids = [p.id for p in catalog(kind)]
    assert len(ids) >= 25 and len(set(ids)) == len(ids)


def test_named_properties_present():
    ids = {k: {p.id for p in catalog(k)} for k in ("matrix", "permutation", "packing_coords")}
    assert {"subsquare_2x2_sum_variance", "horizontal_adjacency_diff"} <= ids["matrix"]
    assert "ascending_pairs" in ids["permutation"]
    assert {"mean_Left_all", "n_boundaries"} <= ids["packing_coords"]


CASES = [("latin_square", "ls4"), ("nqueens", "q8"), ("black_hole", "bh_a"),
         ("social_golfers", "sg_3_2_3"), ("vessel_loading", "vl_4x4")]


@pytest.mark.parametrize("name,iid", CASES)
def test_expressions_agree_with_values(name, iid):
    """Each property's constraint expression evaluates to value * scale."""
    prob, sols, tensors = corpus(name, iid, limit=25)
    model = prob.instance_model(iid)
    exprs = property_exprs(prob, model)
    assert exprs
    vectors = compute_all(prob, tensors, sols)
    for sol, vec in zip(sols, vectors):
        env = dict(model.params)
        env.update(sol.arrays)
        for pid, e in exprs.items():
            got = evaluate(parse_expression(e.aggregate()), env)
            assert got == pytest.approx(vec.values[pid] * e.scale), pid


def test_latin_row_sums_constant():
    prob, sols, tensors = corpus("latin_square", "ls4", limit=576)
    vectors = compute_all(prob, tensors, sols)
    assert all(v.values["row_sums_mean"] == 10 and v.values["row_sums_std"] == 0 for v in vectors)
    stats = classify_properties(vectors)
    assert stats["row_sums_std"].constant and stats["row_sums_max"].constant
    assert not stats["top_left"].near_constant


def test_permutation_examples():
    from streamwork.encode import encode
    from streamwork.minicp import IntArray, load_problem
    from streamwork.outcome import Solution
    prob = load_problem({
        "name": "p5", "shape": "permutation", "params": {"n": 5},
        "variables": [{"name": "x", "index": ["1..n"], "domain": "1..n"}],
        "encoding": {"variable": "x"}, "instances": {"p": {}}, "train": ["p"], "test": [],
    })
    s = Solution("p", {"x": IntArray.from_nested("x", [1, 2, 3, 4, 5])})
    v = compute_all(prob, [encode(prob, s)], [s])[0].values
    assert v["ascending_pairs"] == 4 and v["max_adjacent_diff"] == 1
    assert v["fixed_points"] == 5 and v["inversions"] == 0


def test_contrast_values_for_ascending_pairs():
    # the 3-vs-3 contrast reported for a high/low filter split
    high, low = [29, 30, 29], [24, 26, 24]
    assert statistics.mean(high) - statistics.mean(low) == pytest.approx(14 / 3)


def naive_stats(values):
    n = len(values)
    mean = sum(values) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in values) / n)
    return mean, std, min(values), max(values), sorted(values)[(n - 1) // 2]


def test_stats_match_naive_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        vals = list(rng.normal(rng.uniform(-5, 5), rng.uniform(0, 3), rng.integers(2, 40)))
        s = summarize(vals)
        mean, std, lo, hi, med = naive_stats(vals)
        assert abs(s.mean - mean) <= 1e-9 and abs(s.std - std) <= 1e-9
        assert (s.min, s.max, s.median) == (lo, hi, med)
        assert s.min <= s.median <= s.max


def vecs(values):
    return [PropertyVector(str(i), {"p": v}) for i, v in enumerate(values)]


def test_classification_examples():
    assert classify_properties(vecs([7.0] * 5))["p"].constant
    assert classify_properties(vecs([7.0] * 5))["p"].near_constant
    # mean 1.32, std 0.009
    s = classify_properties(vecs([1.311, 1.329] * 10))["p"]
    assert s.near_constant and not s.constant
    assert abs(s.mean - 1.32) < 1e-9 and abs(s.std - 0.009) < 1e-9
    s = classify_properties(vecs([1.0, 100.0]))["p"]
    assert not s.near_constant and not s.constant
    # ascending-pairs spread of 1.5 is not near-constant
    assert not summarize([27.2 - 1.5, 27.2 + 1.5]).near_constant
    with pytest.raises(PropertyError):
        classify_properties([])
    with pytest.raises(PropertyError):
        classify_properties(vecs([1.0]))


def test_progression_table():
    from streamwork.props import PropertyStat

    def st(v):
        return {"row_sums_max": PropertyStat(v, 0, v, v, v, True, True),
                "const": PropertyStat(2, 0, 2, 2, 2, True, True)}

    table = progression_table({3: st(6.0), 4: st(10.0), 5: st(15.0)})
    fit = table["row_sums_max"]["fit"]
    assert fit["slope"] == pytest.approx(4.5) and fit["rmse"] < 0.5
    assert [r[0] for r in table["row_sums_max"]["rows"]] == [3, 4, 5]
    assert table["const"]["fit"]["slope"] == pytest.approx(0, abs=1e-12)
    single = progression_table({4: st(10.0)})
    assert single["row_sums_max"]["fit"] is None and len(single["row_sums_max"]["rows"]) == 1


def test_vectors_deterministic():
    prob, sols, tensors = corpus("black_hole", "bh_a", 30)
    one = [v.to_dict() for v in compute_all(prob, tensors, sols)]
    prob2, sols2, tensors2 = corpus("black_hole", "bh_a", 30)
    assert one == [v.to_dict() for v in compute_all(prob2, tensors2, sols2)]
