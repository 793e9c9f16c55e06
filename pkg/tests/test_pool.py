import json

import pytest

from streamwork.minicp.parser import parse_expression
from streamwork.pool import (
    SemanticCluster, cluster, expand_representatives, literals, pool_across_instances, signature_of_text,
)
from streamwork.synth import StubBackend, make_candidate

from .conftest import perm_model

MODEL = perm_model(4)


def cand(text, descriptor="d", prop="p", instance="", seed=0):
    return make_candidate(text, descriptor, "llm_stats", MODEL, property_id=prop, instance=instance, seed=seed)


def sums(*ks, op="<="):
    return [cand(f"sum(i in 1..4)(x[i] * i) {op} {k}", f"weighted_{k}") for k in ks]


class Canned:
    def __init__(self, reply):
        self.reply = reply

    def complete(self, request):
        return self.reply


def test_literal_directions():
    assert literals(parse_expression("x[1] <= 5")) == [(1, 0), (5, 1)]
    assert literals(parse_expression("3 >= x[2]")) == [(3, 1), (2, 0)]
    assert literals(parse_expression("x[y[1] + 2] < 4")) == [(1, 0), (2, 0), (4, 1)]
    assert literals(parse_expression("x[1] >= -2")) == [(1, 0), (-2, -1)]
    assert literals(parse_expression("x[1] = 4")) == [(1, 0), (4, 0)]


def test_signature_groups_shapes():
    assert signature_of_text("x[1] = 1") == signature_of_text("x[2] = 3")
    assert signature_of_text("x[1] = 1") != signature_of_text("x[1] <= 1")
    clusters, diags = cluster([cand("x[1] = 1"), cand("x[2] = 1"), cand("x[1] <= x[2]")])
    assert sorted(len(c.members) for c in clusters) == [1, 2] and diags == []


def test_pooling_merges_provenance():
    a = cand("x[1] = 2", instance="ls4")
    b = cand("x[1]=2", instance="ls5", seed=1)
    pool = pool_across_instances({"ls4": [a], "ls5": [b, cand("x[2] = 3", instance="ls5")]})
    assert len(pool) == 2
    assert [p["instance"] for p in pool[0].provenance] == ["ls4", "ls5"]
    assert a.provenance == [{"instance": "ls4", "seed": 0, "method": "llm_stats"}]


def test_roles_without_progression():
    cl = SemanticCluster("s", sums(30, 25, 35))
    reps = expand_representatives(cl)
    assert [(r.role, r.text.split()[-1]) for r in reps] == [("tightest", "25"), ("loosest", "35"), ("median", "30")]


def test_roles_flip_for_lower_bounds():
    reps = expand_representatives(SemanticCluster("s", sums(30, 25, 35, op=">=")))
    assert [(r.role, r.text.split()[-1]) for r in reps] == [("tightest", "35"), ("loosest", "25"), ("median", "30")]


def test_extrapolated_member():
    prog = {"p": {"rows": [[4, 8, 6, 10], [5, 10, 8, 12]], "fit": {"slope": 2.0, "intercept": 0.5}}}
    reps = expand_representatives(SemanticCluster("s", sums(25, 30, 35)), prog, {"p": 2})
    extra = [r for r in reps if r.role == "extrapolated"]
    # (2 * 6 + 0.5) * 2 = 25 collides with the tightest member, so it is dropped
    assert extra == []
    prog["p"]["fit"]["intercept"] = 0.0
    reps = expand_representatives(SemanticCluster("s", sums(25, 30, 35)), prog, {"p": 1})
    extra = [r for r in reps if r.role == "extrapolated"]
    assert [r.text for r in extra] == ["sum(i in 1..4)(x[i] * i) <= 12"]
    assert extra[0].aggressiveness == "aggressive"


def test_unordered_cluster_gets_median_only():
    cl = SemanticCluster("s", [cand(f"x[1] = {k}") for k in (1, 2, 3, 4)])
    reps = expand_representatives(cl)
    assert [(r.role, r.text) for r in reps] == [("median", "x[1] = 2")]


def test_index_only_variation_is_unordered():
    reps = expand_representatives(SemanticCluster("s", [cand(f"x[{i}] <= 3") for i in (1, 2, 3)]))
    assert [(r.role, r.text) for r in reps] == [("median", "x[2] <= 3")]


def test_singleton_passes_through():
    c = cand("x[1] <= 3")
    reps = expand_representatives(SemanticCluster("s", [c]))
    assert [(r.role, r.text) for r in reps] == [("member", "x[1] <= 3")]
    assert c.role == ""


def test_repair_of_responder_grouping():
    a, b, c, d = cand("x[1] = 1"), cand("x[1] = 2"), cand("x[2] <= x[3]"), cand("x[4] = 2")
    reply = "groups: " + json.dumps([[a.id, b.id, c.id], [a.id, "cnope"]])
    clusters, diags = cluster([a, b, c, d], Canned(reply))
    shapes = sorted(sorted(m.text for m in cl.members) for cl in clusters)
    assert shapes == [["x[1] = 1", "x[1] = 2"], ["x[2] <= x[3]"], ["x[4] = 2"]]
    assert any("already assigned" in x for x in diags)
    assert any("unknown id cnope" in x for x in diags)
    assert any("mixes 2 shapes" in x for x in diags)
    assert any(d.id in x and "singleton" in x for x in diags)


def test_unparseable_grouping_falls_back():
    clusters, diags = cluster([cand("x[1] = 1"), cand("x[1] = 2")], Canned("no idea"))
    assert len(clusters) == 1 and "no JSON array" in diags[0]


def test_stub_grouping_matches_signatures():
    pool = sums(25, 30) + [cand("x[1] = 1"), cand("x[3] = 4")]
    via_stub, diags = cluster(pool, StubBackend())
    direct, _ = cluster(pool)
    assert diags == []
    assert sorted(c.signature for c in via_stub) == sorted(c.signature for c in direct)


@pytest.mark.parametrize("ks", [(7,), (3, 9), (4, 4, 8, 12)])
def test_representatives_are_cluster_values(ks):
    cl = SemanticCluster("s", sums(*ks))
    vals = {int(r.text.split()[-1]) for r in expand_representatives(cl)}
    assert vals <= set(ks)
    assert min(ks) in vals
