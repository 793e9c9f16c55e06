"""Finite-domain backtracking search over a grounded model.

Variable order is smallest-current-domain first (ties by declaration order,
or by a seeded shuffle of it), values ascend. Propagation is forward
checking only: once a constraint has a single unassigned variable left, the
values of that variable which violate it are removed; ``alldifferent``
removes an assigned value from its peers immediately.
"""
from __future__ import annotations

import random
import time
from typing import Iterable, Optional

from ..outcome import SAT, TIMEOUT, UNSAT, Solution, SolveOutcome
from .evaluate import IntArray
from .ground import Grounder

FIRST_SAT = "first_sat"
ENUMERATE = "enumerate"


class SolverError(ValueError):
    pass


class _Timeout(Exception):
    pass


class _Stop(Exception):
    pass


class Search:
    def __init__(self, model, extra: Iterable = (), seed: Optional[int] = None):
        extra = [model.parse(e) if isinstance(e, str) else e for e in extra]
        grounder = Grounder(model)
        self.model = model
        self.layout = grounder.layout
        self.constraints, self.consistent = grounder.ground(list(model.constraints) + extra)
        n = self.layout.size
        self.watch = [[] for _ in range(n)]
        self.alldiff_watch = [[] for _ in range(n)]
        for ci, c in enumerate(self.constraints):
            for s in c.scope:
                self.watch[s].append(ci)
            if c.alldiff is not None:
                for s in c.alldiff:
                    self.alldiff_watch[s].append(c.alldiff)
        order = list(range(n))
        if seed is not None:
            random.Random(seed).shuffle(order)
        self.rank = {s: i for i, s in enumerate(order)}
        self.seed = seed
        self.nodes = 0

    def _initial_domains(self):
        domains = [tuple(range(lo, hi + 1)) for lo, hi in self.layout.domains]
        assignment = [None] * self.layout.size
        for c in self.constraints:
            if len(c.scope) == 1:
                s = c.scope[0]
                kept = []
                for v in domains[s]:
                    assignment[s] = v
                    if c.check(assignment):
                        kept.append(v)
                assignment[s] = None
                domains[s] = tuple(kept)
            elif not c.scope and not c.check(assignment):
                return None
        if any(not d for d in domains):
            return None
        return domains

    def _propagate(self, slot, assignment, domains) -> bool:
        value = assignment[slot]
        for peers in self.alldiff_watch[slot]:
            for p in peers:
                if p != slot and assignment[p] is None and value in domains[p]:
                    d = tuple(v for v in domains[p] if v != value)
                    if not d:
                        return False
                    domains[p] = d
        for ci in self.watch[slot]:
            c = self.constraints[ci]
            free = None
            nfree = 0
            for s in c.scope:
                if assignment[s] is None:
                    nfree += 1
                    if nfree > 1:
                        break
                    free = s
            if nfree == 0:
                if not c.check(assignment):
                    return False
            elif nfree == 1:
                kept = []
                for v in domains[free]:
                    assignment[free] = v
                    if c.check(assignment):
                        kept.append(v)
                assignment[free] = None
                if not kept:
                    return False
                if len(kept) != len(domains[free]):
                    domains[free] = tuple(kept)
        return True

    def run(self, limit: Optional[int], node_budget=None, deadline=None, on_solution=None) -> bool:
        """Search; returns True when the space was exhausted."""
        if not self.consistent:
            return True
        domains = self._initial_domains()
        if domains is None:
            return True
        assignment = [None] * self.layout.size
        found = [0]
        rank = self.rank

        def rec(domains):
            self.nodes += 1
            if deadline is not None and time.perf_counter() > deadline:
                raise _Timeout
            if node_budget is not None and self.nodes > node_budget:
                raise _Timeout
            best, best_key = None, None
            for s, v in enumerate(assignment):
                if v is None:
                    key = (len(domains[s]), rank[s])
                    if best_key is None or key < best_key:
                        best, best_key = s, key
            if best is None:
                on_solution(list(assignment))
                found[0] += 1
                if limit is not None and found[0] >= limit:
                    raise _Stop
                return
            for v in domains[best]:
                assignment[best] = v
                child = list(domains)
                child[best] = (v,)
                if self._propagate(best, assignment, child):
                    rec(child)
                assignment[best] = None

        try:
            rec(domains)
        except _Stop:
            return False
        return True

    def to_solution(self, values, instance_id: str) -> Solution:
        arrays = {}
        for name, tmpl in self.layout.arrays.items():
            arrays[name] = IntArray(name, tmpl.ranges, [values[s] for s in tmpl.values])
        return Solution(instance_id, arrays)


def solve(model, extra: Iterable = (), mode: str = FIRST_SAT, limit: Optional[int] = None,
          budget: float = 60.0, seed: Optional[int] = None, instance_id: str = "",
          clock: str = "wall", node_seconds: float = 1e-4) -> SolveOutcome:
    """Solve ``model`` plus ``extra`` constraints.

    ``mode`` is ``first_sat`` or ``enumerate`` (``limit`` caps the number of
    distinct solutions). With ``clock="work"`` elapsed time is the node count
    times ``node_seconds``, which makes timing reproducible across machines.
    """
    if budget is None or budget <= 0:
        raise SolverError("budget must be positive")
    if mode not in (FIRST_SAT, ENUMERATE):
        raise SolverError(f"unknown mode {mode}")
    if mode == FIRST_SAT:
        limit = 1
    if limit is not None and limit < 1:
        raise SolverError("limit must be >= 1")
    if clock not in ("wall", "work"):
        raise SolverError(f"unknown clock {clock}")
    start = time.perf_counter()
    search = Search(model, extra, seed)
    found = []
    deadline = start + budget if clock == "wall" else None
    node_budget = int(budget / node_seconds + 1e-6) if clock == "work" else None
    timed_out = False
    exhausted = False
    try:
        exhausted = search.run(limit, node_budget=node_budget, deadline=deadline,
                               on_solution=found.append)
    except _Timeout:
        timed_out = True
    except RecursionError as exc:  # pragma: no cover
        raise SolverError("model too large for recursive search") from exc
    if clock == "wall":
        elapsed = time.perf_counter() - start
        if timed_out:
            elapsed = min(elapsed, budget)
    else:
        elapsed = round(min(search.nodes, node_budget) * node_seconds, 12)
    solutions = [search.to_solution(v, instance_id) for v in found]
    if solutions:
        status = SAT
    elif timed_out:
        status = TIMEOUT
    else:
        status = UNSAT
    return SolveOutcome(status, elapsed, solutions[0] if solutions else None, "builtin", seed,
                        search.nodes, solutions if mode == ENUMERATE else [],
                        exhausted if mode == ENUMERATE else None)
