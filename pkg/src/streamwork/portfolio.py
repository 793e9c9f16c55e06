"""Deployment: family tags, portfolio selection, race simulation and (k, m) sweeps.

Races are simulated from recorded validation times. A family lane runs its
members one after another, each in a slot of t_b / (members in the lane);
the lane's contribution is the wall-clock time at which a member first
returns SAT, or t_b if none does. The baseline always runs alongside, so an
instance's winner time is the minimum of t_b and all lane contributions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .outcome import SAT

AGGRESSIVENESS_WORDS = {"conservative", "tight", "tightfit", "aggressive", "loose"}
ALL = "all"


class PortfolioError(ValueError):
    pass


def derive_family(descriptor: str) -> str:
    """Descriptor minus trailing integer / aggressiveness tokens (at least one token kept)."""
    if not descriptor:
        raise PortfolioError("empty descriptor")
    tokens = [t for t in descriptor.split("_") if t]
    while len(tokens) > 1:
        last = tokens[-1]
        if re.fullmatch(r"-?\d+", last) or last in AGGRESSIVENESS_WORDS:
            tokens.pop()
        elif last == "fit" and tokens[-2] == "tight" and len(tokens) > 2:
            del tokens[-2:]
        else:
            break
    return "_".join(tokens)


@dataclass(frozen=True)
class Scored:
    id: str
    descriptor: str
    score: float

    @property
    def family(self) -> str:
        return derive_family(self.descriptor)


@dataclass
class PortfolioPlan:
    rule: str                     # simple_top_k | family_budget
    k: int
    m: object                     # int or "all"
    lanes: list = field(default_factory=list)   # [(family or candidate id, [candidate ids])]

    @property
    def members(self) -> list:
        return [c for _, ids in self.lanes for c in ids]

    def family_sizes(self) -> dict:
        return {name: len(ids) for name, ids in self.lanes}

    def to_dict(self) -> dict:
        return {"rule": self.rule, "k": self.k, "m": self.m,
                "lanes": [{"name": n, "members": ids} for n, ids in self.lanes]}


def _order(cands: Iterable[Scored]) -> list[Scored]:
    return sorted(cands, key=lambda c: (-c.score, c.id))


def select_family_budget(scored: Sequence[Scored], k: int, m) -> PortfolioPlan:
    """Top-k families by best member score, each with its top-m members."""
    if k < 1 or (m != ALL and m < 1):
        raise PortfolioError("k and m must be >= 1")
    fams: dict[str, list] = {}
    for c in _order(scored):
        fams.setdefault(c.family, []).append(c)
    ranked = sorted(fams.items(), key=lambda kv: (-kv[1][0].score, kv[1][0].id))[:k]
    lanes = [(name, [c.id for c in (members if m == ALL else members[:m])]) for name, members in ranked]
    return PortfolioPlan("family_budget", k, m, lanes)


def select_simple_top_k(scored: Sequence[Scored], k: int) -> PortfolioPlan:
    if k < 1:
        raise PortfolioError("k must be >= 1")
    return PortfolioPlan("simple_top_k", k, 1, [(c.id, [c.id]) for c in _order(scored)[:k]])


# ------------------------------------------------------------------ races

@dataclass
class RaceRow:
    instance: str
    baseline: float
    winner: str                       # candidate id or "baseline"
    t_winner: float
    contributions: dict               # lane name -> time
    lanes: int
    budget: float                     # total process-time budget, baseline included

    @property
    def cpu(self) -> float:
        return (self.lanes + 1) * self.t_winner


def _lookup(records: Mapping, cid: str, instance: str):
    try:
        rec = records[cid]
    except KeyError:
        raise PortfolioError(f"no record for candidate {cid} on instance {instance}") from None
    if isinstance(rec, tuple):
        return rec
    return rec.status, rec.elapsed


def _lane(ids, records, instance, t_b, reallocate):
    slot = t_b / len(ids)
    offset = 0.0
    for j, cid in enumerate(ids):
        status, t_c = _lookup(records, cid, instance)
        start = offset if reallocate else j * slot
        if t_c <= slot:
            if status == SAT:
                return min(t_b, start + t_c), cid
            offset = start + t_c
        else:
            offset = start + slot
    return t_b, None


def simulate_race(plan: PortfolioPlan, records: Mapping, t_b: float, instance: str = "",
                  reallocate: bool = True) -> RaceRow:
    """One instance. ``records`` maps candidate id to a record or (status, elapsed).

    With ``reallocate`` a member that fails before its slot ends hands the
    rest of the slot to the next member; without it every member starts on
    its fixed slot boundary. Ties go to the baseline, then to plan order.
    """
    if t_b <= 0:
        raise PortfolioError(f"baseline time for {instance or 'instance'} must be positive")
    best, winner, contrib = t_b, "baseline", {}
    for name, ids in plan.lanes:
        t, who = _lane(ids, records, instance, t_b, reallocate)
        contrib[name] = t
        if who is not None and t < best:
            best, winner = t, who
    lanes = len(plan.lanes)
    # process time on offer: each lane's slots plus the baseline process
    budget = t_b + sum(len(ids) * (t_b / len(ids)) for _, ids in plan.lanes)
    return RaceRow(instance, t_b, winner, best, contrib, lanes, budget)


def race_all(plan: PortfolioPlan, records_by_instance: Mapping, baselines: Mapping,
             reallocate: bool = True) -> list[RaceRow]:
    return [simulate_race(plan, records_by_instance.get(i, {}), t_b, i, reallocate)
            for i, t_b in baselines.items()]


def portfolio_savings(rows: Sequence[RaceRow]) -> tuple[float, float]:
    """(wall-clock, CPU-adjusted) savings over the instances in ``rows``."""
    total = sum(r.baseline for r in rows)
    if total <= 0:
        raise PortfolioError("savings need a positive total baseline time")
    wall = (total - sum(r.t_winner for r in rows)) / total
    cpu = (total - sum(r.cpu for r in rows)) / total
    return wall, cpu


def records_by_instance(records: Iterable) -> dict:
    """{instance: {candidate id: record}} from validation records."""
    out: dict = {}
    for r in records:
        out.setdefault(r.instance_id, {})[r.candidate_id] = r
    return out


def sweep_km(scored: Sequence[Scored], records_by_inst: Mapping, baselines: Mapping,
             ks=range(1, 6), ms=(1, 2, 3, ALL), reallocate: bool = True) -> dict:
    """{(k, m): {"wall": .., "cpu": .., "budget": [per-instance budgets]}}."""
    out = {}
    for k in ks:
        for m in ms:
            plan = select_family_budget(scored, k, m)
            rows = race_all(plan, records_by_inst, baselines, reallocate)
            wall, cpu = portfolio_savings(rows)
            out[(k, m)] = {"wall": wall, "cpu": cpu, "lanes": len(plan.lanes),
                           "budget": [r.budget for r in rows]}
    return out


def sweep_table(sweep: dict) -> list[dict]:
    return [{"k": k, "m": m, "wall_clock": v["wall"], "cpu_adjusted": v["cpu"], "lanes": v["lanes"]}
            for (k, m), v in sweep.items()]


def best_single_plan(cid: str) -> PortfolioPlan:
    return PortfolioPlan("simple_top_k", 1, 1, [(cid, [cid])])


def scored_from(candidates, scores: Mapping[str, float], only: Optional[set] = None) -> list[Scored]:
    return [Scored(c.id, c.descriptor, float(scores.get(c.id, 0.0))) for c in candidates
            if only is None or c.id in only]
