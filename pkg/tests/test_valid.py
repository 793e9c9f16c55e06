import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from streamwork.corpus import BaselineCache
from streamwork.minicp import solve
from streamwork.outcome import ERROR, SAT, TIMEOUT, UNSAT, SolveOutcome
from streamwork.problems import builtin_problem
from streamwork.synth import make_candidate
from streamwork.valid import (
    RecordStore, ValidationError, ValidationRecord, best_single, candidate_metrics, geomean_speedup,
    metrics_report, per_instance_speedup, pool_ceiling, read_table, validate_phase_test,
    validate_phase_train, winner_table, write_table,
)


SOL = solve(builtin_problem("nqueens").base).solution


def outcome(status, t, seed=None):
    return SolveOutcome(status, t, SOL if status == SAT else None, "scripted", seed)


class Scripted:
    """Backend answering from a table {(constraint, instance): (status, elapsed)}."""

    id = "scripted"

    def __init__(self, table):
        self.table = table
        self.calls = []

    def solve(self, problem, instance_id, extra=(), mode="first_sat", limit=None, budget=1.0):
        self.calls.append((extra[0], instance_id))
        status, t = self.table[(extra[0], instance_id)]
        return outcome(status, t, seed=5)


@pytest.fixture
def queens():
    return builtin_problem("nqueens")


@pytest.fixture
def cache(tmp_path, queens):
    c = BaselineCache(tmp_path / "baselines.jsonl")
    c.put(queens.name, "q6", outcome(SAT, 2.0))
    c.put(queens.name, "q8", outcome(SAT, 4.0))
    return c


def cands(queens):
    model = queens.base
    return [make_candidate(t, d, "template", model) for t, d in
            [("q[1] = 2", "first_two"), ("q[1] = 1", "first_one"), ("q[2] <= 3", "second_low")]]


def table():
    return {
        ("q[1] = 2", "q6"): (SAT, 0.5), ("q[1] = 2", "q8"): (SAT, 4.0),
        ("q[1] = 1", "q6"): (UNSAT, 0.1), ("q[1] = 1", "q8"): (TIMEOUT, 4.0),
        ("q[2] <= 3", "q6"): (SAT, 1.5), ("q[2] <= 3", "q8"): (SAT, 1.0),
    }


def test_train_scores_and_survivors(tmp_path, queens, cache):
    store = RecordStore(tmp_path / "records.jsonl")
    res = validate_phase_train(queens, cands(queens), ["q6", "q8"], cache, store, Scripted(table()))
    ids = {c.descriptor: c.id for c in cands(queens)}
    assert res.solves == 6
    assert res.scores == {ids["first_two"]: 1.5, ids["first_one"]: 0.0, ids["second_low"]: 3.5}
    assert [c.descriptor for c in res.survivors] == ["first_two", "second_low"]
    assert all(r.seed == 5 and r.phase == "train" for r in res.records)


def test_resume_does_not_repeat_solves(tmp_path, queens, cache):
    path = tmp_path / "records.jsonl"
    first = Scripted(table())
    validate_phase_train(queens, cands(queens)[:1], ["q6", "q8"], cache, RecordStore(path), first)
    again = Scripted(table())
    res = validate_phase_train(queens, cands(queens), ["q6", "q8"], cache, RecordStore(path), again)
    assert len(first.calls) == 2 and len(again.calls) == 4 and res.solves == 4
    assert len(path.read_text().splitlines()) == 6
    rerun = Scripted(table())
    assert validate_phase_train(queens, cands(queens), ["q6", "q8"], cache, RecordStore(path), rerun).solves == 0
    assert rerun.calls == []


def test_parallel_workers_match_serial(tmp_path, queens, cache):
    a = validate_phase_train(queens, cands(queens), ["q6", "q8"], cache, RecordStore(tmp_path / "a.jsonl"),
                             Scripted(table()), workers=3)
    b = validate_phase_train(queens, cands(queens), ["q6", "q8"], cache, RecordStore(tmp_path / "b.jsonl"),
                             Scripted(table()))
    assert sorted(a.records, key=lambda r: r.key) == sorted(b.records, key=lambda r: r.key)


def test_missing_baseline(tmp_path, queens, cache):
    with pytest.raises(ValidationError, match="q10"):
        validate_phase_test(queens, cands(queens), ["q6", "q10"], cache, RecordStore(tmp_path / "r.jsonl"),
                            Scripted(table()))


def test_rejected_constraint_becomes_error(tmp_path, queens, cache):
    bad = make_candidate("q[1] = 1", "x", "template", queens.base)
    bad.text = "nosuch[1] = 1"
    res = validate_phase_train(queens, [bad], ["q6"], cache, RecordStore(tmp_path / "r.jsonl"))
    assert [r.status for r in res.records] == [ERROR] and res.survivors == []


def test_record_guards():
    with pytest.raises(ValueError, match="exceeds"):
        ValidationRecord("c", "i", "test", SAT, 3.0, 2.0)
    with pytest.raises(ValueError):
        ValidationRecord("c", "i", "dev", SAT, 1.0, 2.0)
    with pytest.raises(ValueError):
        ValidationRecord("c", "i", "test", SAT, 0.0, 0.0)


def test_table_roundtrip(tmp_path):
    recs = [ValidationRecord("c1", "i1", "test", SAT, 0.25, 1.0, 3), ValidationRecord("c1", "i2", "test", TIMEOUT, 1.0, 1.0)]
    write_table(tmp_path / "t.csv", recs)
    assert read_table(tmp_path / "t.csv") == recs
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == \
        "candidate_id,instance_id,phase,status,elapsed_s,baseline_s,seed"


# ---------------------------------------------------------------- metrics

def rec(cid, iid, status, t_c, t_b, base_status=SAT):
    return ValidationRecord(cid, iid, "test", status, t_c, t_b, None, base_status)


def test_speedup_floor_and_status():
    assert per_instance_speedup(rec("c", "i", SAT, 0.5, 2.0)) == 4.0
    assert per_instance_speedup(rec("c", "i", SAT, 0.0, 2.0)) == 2000.0
    assert per_instance_speedup(rec("c", "i", UNSAT, 0.5, 2.0)) is None
    assert per_instance_speedup(rec("c", "i", SAT, 0.5, 2.0, TIMEOUT)) is None


def test_geomean_of_ten_and_thousand():
    gm, n, mx = geomean_speedup([rec("c", "a", SAT, 0.1, 1.0), rec("c", "b", SAT, 0.001, 1.0),
                                 rec("c", "x", UNSAT, 0.2, 1.0)])
    assert math.isclose(gm, 100.0) and n == 2 and math.isclose(mx, 1000.0)
    assert geomean_speedup([rec("c", "x", TIMEOUT, 1.0, 1.0)]) == (None, 0, None)


def test_candidate_metrics_skip_errors():
    recs = [rec("c", "a", SAT, 0.5, 1.0), rec("c", "b", ERROR, 0.0, 1.0), rec("c", "d", UNSAT, 0.1, 1.0)]
    m = candidate_metrics(recs)["c"]
    assert (m["sat"], m["unsat"], m["error"], m["retained"], m["geomean"]) == (1, 1, 1, 1, 2.0)


def test_best_single_ties():
    metrics = {"cb": {"geomean": 2.0, "retained": 3}, "ca": {"geomean": 2.0, "retained": 3},
               "cc": {"geomean": 2.0, "retained": 5}, "cd": {"geomean": None, "retained": 0}}
    assert best_single(metrics) == "cc"
    del metrics["cc"]
    assert best_single(metrics) == "ca"
    assert best_single({"cd": {"geomean": None, "retained": 0}}) is None


def brute_ceiling(records, baselines):
    """Try every per-instance choice of one SAT record (or the baseline) and keep the best."""
    options = []
    for i, t_b in baselines.items():
        options.append([t_b] + [r.elapsed for r in records if r.instance_id == i and r.status == SAT])
    total = sum(baselines.values())
    return max((total - sum(choice)) / total for choice in itertools.product(*options))


def test_pool_ceiling_matches_brute_force():
    rng = random.Random(4)
    for _ in range(50):
        baselines = {f"i{j}": rng.uniform(0.5, 5.0) for j in range(rng.randint(1, 4))}
        records = []
        for c in range(rng.randint(0, 4)):
            for i, t_b in baselines.items():
                status = rng.choice([SAT, SAT, UNSAT, TIMEOUT])
                records.append(rec(f"c{c}", i, status, t_b if status == TIMEOUT else rng.uniform(0, t_b), t_b))
        assert math.isclose(pool_ceiling(records, baselines), brute_ceiling(records, baselines), abs_tol=1e-12)


def test_winner_table_and_report():
    baselines = {"a": 1.0, "b": 2.0}
    recs = [rec("c1", "a", SAT, 0.4, 1.0), rec("c2", "a", SAT, 0.2, 1.0), rec("c2", "b", UNSAT, 0.1, 2.0)]
    assert winner_table(recs, baselines) == {"a": ("c2", 0.2), "b": ("baseline", 2.0)}
    rep = metrics_report(recs, baselines, {"family_budget": {"wall_clock": 0.1}}).to_dict()
    assert math.isclose(rep["pool_ceiling"], 0.8 / 3)
    assert rep["best_single"] == "c2" and rep["winners"]["a"] == ["c2", 0.2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([SAT, UNSAT, TIMEOUT]), st.floats(0, 1)), min_size=1, max_size=8))
def test_ceiling_bounds(rows):
    recs = [rec(f"c{k}", "i", s, 1.0 if s == TIMEOUT else t, 1.0) for k, (s, t) in enumerate(rows)]
    c = pool_ceiling(recs, {"i": 1.0})
    assert 0.0 <= c <= 1.0
    assert math.isclose(c, 1.0 - min([1.0] + [r.elapsed for r in recs if r.status == SAT]))
