import itertools

import pytest
from hypothesis import given, settings, strategies as st

from streamwork.minicp import (
    EvalError, IntArray, SolverError, eval_constraint, parse_constraint, solve,
)
from streamwork.minicp.evaluate import DivisionByZero, IndexOutOfBounds
from streamwork.outcome import SAT, TIMEOUT, UNSAT

from .conftest import latin_model, perm_model, queens_model


def brute_latin(n):
    """Latin squares built row by row from permutations; columns checked."""
    rows = list(itertools.permutations(range(1, n + 1)))
    out = []
    for combo in itertools.product(rows, repeat=n):
        if all(len({r[j] for r in combo}) == n for j in range(n)):
            out.append(combo)
    return out


def brute_queens(n):
    count = 0
    for q in itertools.product(range(1, n + 1), repeat=n):
        ok = all(q[i] != q[j] and abs(q[i] - q[j]) != j - i
                 for i in range(n) for j in range(i + 1, n))
        count += ok
    return count


def test_eval_identity_permutation():
    model = perm_model(5)
    x = {"x": IntArray("x", [(1, 5)], [1, 2, 3, 4, 5])}
    assert eval_constraint(parse_constraint("forall(p in 1..4)(x[p+1] > x[p])", model), x, model.params)
    assert not eval_constraint(parse_constraint("exists(p in 1..4)(x[p+1] < x[p])", model), x, model.params)


def test_eval_latin_rows():
    model = latin_model(3)
    a = {"a": IntArray.from_nested("a", [[1, 2, 3], [2, 3, 1], [3, 1, 2]])}
    expr = parse_constraint("forall(i in 1..n)(alldifferent([a[i, j] | j in 1..n]))", model)
    assert eval_constraint(expr, a, model.params)
    bad = {"a": IntArray.from_nested("a", [[1, 2, 2], [2, 3, 1], [3, 1, 2]])}
    assert not eval_constraint(expr, bad, model.params)


def test_eval_errors_are_reported():
    model = perm_model(3)
    x = {"x": IntArray("x", [(1, 3)], [1, 2, 3])}
    with pytest.raises(IndexOutOfBounds):
        eval_constraint(parse_constraint("x[4] = 1", model), x, model.params)
    with pytest.raises(DivisionByZero):
        eval_constraint(parse_constraint("x[1] div (x[1] - 1) = 0", model), x, model.params)
    with pytest.raises(DivisionByZero):
        eval_constraint(parse_constraint("x[2] mod 0 = 0", model), x, model.params)


def test_div_mod_truncate_toward_zero():
    model = perm_model(3)
    env = {"x": IntArray("x", [(1, 3)], [1, 2, 3])}
    assert eval_constraint(parse_constraint("-7 div 2 = -3", model), env, {})
    assert eval_constraint(parse_constraint("-7 mod 2 = -1", model), env, {})
    assert eval_constraint(parse_constraint("7 mod -2 = 1", model), env, {})


def test_eval_unbound_name():
    model = perm_model(3)
    with pytest.raises(EvalError):
        eval_constraint(parse_constraint("x[1] = 1"), {}, {})


@pytest.mark.parametrize("n", [2, 3, 4])
def test_latin_counts_match_brute_force(n):
    oracle = brute_latin(n)
    out = solve(latin_model(n), mode="enumerate", limit=10000)
    assert out.exhausted
    assert len(out.solutions) == len(oracle)
    got = {tuple(tuple(r) for r in s.arrays["a"].to_nested()) for s in out.solutions}
    assert got == set(oracle)


def test_latin_order4_is_576():
    out = solve(latin_model(4), mode="enumerate", limit=10000)
    assert (len(out.solutions), out.exhausted) == (576, True)


@pytest.mark.parametrize("n,expected", [(4, 2), (5, 10), (6, 4)])
def test_queens_counts_match_brute_force(n, expected):
    assert brute_queens(n) == expected
    out = solve(queens_model(n), mode="enumerate", limit=10)
    assert len(out.solutions) == expected


def test_enumeration_limit_flag():
    out = solve(latin_model(4), mode="enumerate", limit=10)
    assert len(out.solutions) == 10
    assert out.exhausted is False
    assert len(set(out.solutions)) == 10


def test_solutions_are_sound():
    model = latin_model(4)
    extra = [parse_constraint("a[1, 1] + a[2, 2] <= 4", model)]
    out = solve(model, extra, mode="enumerate", limit=1000)
    assert out.solutions
    for sol in out.solutions:
        for c in list(model.constraints) + extra:
            assert eval_constraint(c, sol, model.params)


def test_unsat_extra():
    for model in (latin_model(3), queens_model(6)):
        assert solve(model, ["1 = 2"]).status == UNSAT
        assert solve(model, ["1 = 2"], mode="enumerate", limit=5).status == UNSAT


def test_queens3_unsat():
    out = solve(queens_model(3), mode="enumerate", limit=10)
    assert out.status == UNSAT and out.exhausted


def test_first_sat_status_and_time():
    out = solve(queens_model(6))
    assert out.status == SAT
    assert out.elapsed > 0
    assert out.solution.arrays["q"].values in {(2, 4, 6, 1, 3, 5), (3, 6, 2, 5, 1, 4),
                                                (4, 1, 5, 2, 6, 3), (5, 3, 1, 6, 4, 2)}


def test_deterministic_order():
    a = solve(latin_model(4), mode="enumerate", limit=50)
    b = solve(latin_model(4), mode="enumerate", limit=50)
    assert [s.key() for s in a.solutions] == [s.key() for s in b.solutions]
    c = solve(latin_model(4), mode="enumerate", limit=50, seed=3)
    d = solve(latin_model(4), mode="enumerate", limit=50, seed=3)
    assert [s.key() for s in c.solutions] == [s.key() for s in d.solutions]


def test_budget_validation():
    with pytest.raises(SolverError):
        solve(latin_model(3), budget=0)
    with pytest.raises(SolverError):
        solve(latin_model(3), budget=-1)


def test_tiny_budget_times_out():
    out = solve(queens_model(10), mode="enumerate", limit=10000, budget=1e-6)
    assert out.status == TIMEOUT
    assert out.elapsed <= 1e-6 + 1e-9


def test_work_clock_is_reproducible():
    a = solve(queens_model(8), clock="work")
    b = solve(queens_model(8), clock="work")
    assert a.elapsed == b.elapsed == a.nodes * 1e-4


_extra_pool = [
    "a[1, 1] = 1", "a[1, 2] <= 2", "a[2, 2] != a[1, 1]", "sum(i in 1..n)(a[i, i]) <= 8",
    "forall(j in 1..n-1)(a[1, j+1] > a[1, j])", "a[n, n] >= 3", "exists(i in 1..n)(a[i, i] = 4)",
]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(_extra_pool), max_size=3))
def test_extra_constraints_never_add_solutions(extra):
    model = latin_model(4)
    base = solve(model, mode="enumerate", limit=1000)
    more = solve(model, extra, mode="enumerate", limit=1000)
    assert len(more.solutions) <= len(base.solutions)
    assert set(more.solutions) <= set(base.solutions)
