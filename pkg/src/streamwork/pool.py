"""Pooling across instances, clustering by shape, and representative expansion."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .minicp.ast import Binary, Ident, Index, IntLit, Unary
from .minicp.parser import parse_expression, to_text
from .synth.candidates import Candidate, dedup
from .synth.payloads import build_cluster_payload

log = logging.getLogger(__name__)

HOLE = "_"
ROLES = ("tightest", "loosest", "median", "extrapolated")


def pool_across_instances(per_instance: Mapping[str, list]) -> list[Candidate]:
    """Union of every instance's candidates; duplicates merge their provenance."""
    merged = []
    for cands in per_instance.values():
        merged.extend(copy.deepcopy(c) for c in cands)
    return dedup(merged)


# ------------------------------------------------------------- signatures

def _map_ast(node, fn):
    node = fn(node)
    if not dataclasses.is_dataclass(node):
        return node
    changes = {}
    for f in dataclasses.fields(node):
        value = getattr(node, f.name)
        if dataclasses.is_dataclass(value):
            changes[f.name] = _map_ast(value, fn)
        elif isinstance(value, tuple):
            changes[f.name] = tuple(_map_ast(v, fn) if dataclasses.is_dataclass(v) else v
                                    for v in value)
    return dataclasses.replace(node, **changes) if changes else node


def _holed(node):
    if isinstance(node, IntLit):
        return Ident(HOLE)
    if isinstance(node, Unary) and node.op == "-" and isinstance(node.operand, IntLit):
        return Ident(HOLE)
    return node


def signature(node) -> str:
    """Printed AST with every integer literal replaced by a hole."""
    return to_text(_map_ast(node, _holed))


def signature_of_text(text: str) -> str:
    return signature(parse_expression(text))


def literals(node) -> list[tuple[int, int]]:
    """Integer literals in print order, each with its tightness direction.

    Direction is +1 when a larger literal loosens the constraint (the literal
    is the right operand of ``<=``/``<`` or the left of ``>=``/``>``), -1 for
    the reverse, 0 when no enclosing comparison orders it. Array subscripts
    are never ordered.
    """
    out = []

    def visit(n, direction):
        if isinstance(n, IntLit):
            out.append((n.value, direction))
            return
        if isinstance(n, Unary) and n.op == "-" and isinstance(n.operand, IntLit):
            out.append((-n.operand.value, direction))
            return
        if isinstance(n, Index):
            for v in n.indices:
                visit(v, 0)
            return
        if isinstance(n, Binary) and n.op in ("<", "<=", ">", ">="):
            up = 1 if n.op in ("<", "<=") else -1
            visit(n.left, -up)
            visit(n.right, up)
            return
        if isinstance(n, Binary) and n.op in ("=", "!="):
            visit(n.left, 0)
            visit(n.right, 0)
            return
        if not dataclasses.is_dataclass(n):
            return
        for f in dataclasses.fields(n):
            value = getattr(n, f.name)
            if dataclasses.is_dataclass(value):
                visit(value, direction)
            elif isinstance(value, tuple):
                for v in value:
                    if dataclasses.is_dataclass(v):
                        visit(v, direction)

    visit(node, 0)
    return out


def _replace_literal(node, position: int, value: int):
    """Copy of ``node`` with the ``position``-th literal (``literals`` order) set to ``value``."""
    counter = [-1]

    def rec(n):
        if isinstance(n, IntLit) or (isinstance(n, Unary) and n.op == "-"
                                     and isinstance(n.operand, IntLit)):
            counter[0] += 1
            if counter[0] == position:
                return IntLit(value) if value >= 0 else Unary("-", IntLit(-value))
            return n
        if not dataclasses.is_dataclass(n):
            return n
        changes = {}
        for f in dataclasses.fields(n):
            v = getattr(n, f.name)
            if dataclasses.is_dataclass(v):
                changes[f.name] = rec(v)
            elif isinstance(v, tuple):
                changes[f.name] = tuple(rec(x) if dataclasses.is_dataclass(x) else x for x in v)
        return dataclasses.replace(n, **changes) if changes else n

    return rec(node)


# --------------------------------------------------------------- clusters

@dataclass
class SemanticCluster:
    signature: str
    members: list
    representatives: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"signature": self.signature,
                "members": [{"id": c.id, "text": c.text, "descriptor": c.descriptor}
                            for c in self.members],
                "representatives": [{"id": c.id, "role": c.role, "text": c.text}
                                    for c in self.representatives]}


def _by_signature(cands) -> list[SemanticCluster]:
    groups: dict[str, list] = {}
    for c in cands:
        groups.setdefault(signature_of_text(c.text), []).append(c)
    return [SemanticCluster(sig, members) for sig, members in groups.items()]


def cluster(pool: list[Candidate], backend=None, params: Optional[dict] = None):
    """Group parametrically equivalent candidates.

    With ``backend`` the grouping comes from the responder and is repaired:
    an id in two groups stays in the first, unknown ids are ignored, missed
    ids become singletons, and groups mixing signatures are split. Without
    one, candidates are grouped by signature. Returns (clusters, diagnostics).
    """
    diagnostics = []
    if backend is None or not pool:
        return _by_signature(pool), diagnostics
    from .synth.llm import request_for

    response = backend.complete(request_for(build_cluster_payload(pool), params))
    by_id = {c.id: c for c in pool}
    groups = None
    try:
        start = response.index("[")
        groups, _ = json.JSONDecoder().raw_decode(response, start)
    except (ValueError, json.JSONDecodeError):
        diagnostics.append("cluster response has no JSON array; grouping by signature")
        return _by_signature(pool), diagnostics
    assigned, clusters = set(), []
    for g, ids in enumerate(groups):
        members = []
        for cid in ids if isinstance(ids, list) else []:
            if cid not in by_id:
                diagnostics.append(f"group {g}: unknown id {cid}")
            elif cid in assigned:
                diagnostics.append(f"group {g}: {cid} already assigned, keeping first")
            else:
                assigned.add(cid)
                members.append(by_id[cid])
        parts = _by_signature(members)
        if len(parts) > 1:
            diagnostics.append(f"group {g}: mixes {len(parts)} shapes, split")
        clusters.extend(parts)
    for c in pool:
        if c.id not in assigned:
            diagnostics.append(f"{c.id} not grouped, singleton")
            clusters.append(SemanticCluster(signature_of_text(c.text), [c]))
    for d in diagnostics:
        log.info("cluster repair: %s", d)
    return clusters, diagnostics


# --------------------------------------------------------- representatives

def _with_role(c: Candidate, role: str, text: Optional[str] = None, aggressiveness: Optional[str] = None):
    out = copy.deepcopy(c)
    out.role = role
    if text is not None:
        out.text = text
    if aggressiveness:
        out.aggressiveness = aggressiveness
    return out


def _extrapolate(member, progression, scales, direction):
    if not progression or member.property_id not in progression:
        return None
    entry = progression[member.property_id]
    fit = entry.get("fit")
    if not fit:
        return None
    sizes = [r[0] for r in entry["rows"]]
    step = sizes[-1] - sizes[-2] if len(sizes) >= 2 else 1
    x = sizes[-1] + step
    value = (fit["slope"] * x + fit["intercept"]) * (scales or {}).get(member.property_id, 1)
    # tighter side: smaller literal when larger loosens
    return math.floor(value + 1e-9) if direction > 0 else math.ceil(value - 1e-9)


def expand_representatives(cl: SemanticCluster, progression: Optional[dict] = None,
                           scales: Optional[dict] = None) -> list[Candidate]:
    """Up to four representatives: tightest, loosest, median, extrapolated.

    The varying literal position decides the parameter; its comparison
    direction decides which end is tight. Mixed or unordered directions get
    the median only. Clusters without literals pass through unchanged.
    """
    members = cl.members
    parsed = [parse_expression(c.text) for c in members]
    lits = [literals(p) for p in parsed]
    if not lits[0] or len(members) == 1:
        reps = [_with_role(c, c.role or "member") for c in members]
        cl.representatives = reps
        return reps
    width = len(lits[0])
    varying = [i for i in range(width) if len({ls[i][0] for ls in lits}) > 1]
    if len(varying) != 1:
        direction = 0
        pos = varying[0] if varying else 0
    else:
        pos = varying[0]
        dirs = {ls[pos][1] for ls in lits}
        direction = dirs.pop() if len(dirs) == 1 else 0
    if len(varying) > 1:
        direction = 0
    values = sorted({ls[pos][0] for ls in lits})
    first_with = {}
    for c, ls in zip(members, lits):
        first_with.setdefault(ls[pos][0], c)
    median_val = values[(len(values) - 1) // 2]
    reps, used = [], set()

    def emit(value, role, text=None, aggr=None, base=None):
        if value in used:
            return
        used.add(value)
        reps.append(_with_role(base or first_with[value], role, text, aggr))

    if direction == 0:
        emit(median_val, "median")
    else:
        tight_val = values[0] if direction > 0 else values[-1]
        loose_val = values[-1] if direction > 0 else values[0]
        emit(tight_val, "tightest")
        emit(loose_val, "loosest")
        emit(median_val, "median")
        base = first_with[tight_val]
        k = _extrapolate(base, progression, scales, direction)
        if k is not None:
            idx = members.index(base)
            text = to_text(_replace_literal(parsed[idx], pos, k))
            emit(k, "extrapolated", text, "aggressive", base)
    cl.representatives = reps
    return reps
