"""Mechanical candidates from property statistics, no LLM involved."""
from __future__ import annotations

from .candidates import CandidateError, make_candidate
from ..props import catalog, make_context

# extremum-location pairs: (row prop, col prop, base name, comparison)
_MATRIX_POSITIONS = [("argmax_row", "argmax_col", "argmax", ">="),
                     ("argmin_row", "argmin_col", "argmin", "<=")]
_PERM_POSITIONS = [("argmax_position", "argmax", ">="), ("argmin_position", "argmin", "<=")]


def _integral(x):
    k = round(x)
    return k if abs(x - k) <= 1e-6 else None


def _equality(prop, expr, st):
    k = _integral(st.median * expr.scale)
    if k is None:
        return None, f"{prop.id}: value {st.median} x {expr.scale} is not integral"
    if expr.form == "scalar":
        return (expr.bound("=", k), f"{prop.id.lower()}_eq", "aggregate"), None
    op = "<=" if expr.form == "max" else ">="
    tag = "cap" if expr.form == "max" else "floor"
    return (expr.bound(op, k), f"{prop.id.lower()}_{tag}", "universal"), None


def _position_texts(ctx, stats):
    out = []
    near = lambda pid: pid in stats and stats[pid].near_constant  # noqa: E731
    if ctx.kind in ("matrix", "assignment") and len(ctx.index) == 2:
        R, C = ctx.index
        for rp, cp, base, op in _MATRIX_POSITIONS:
            if near(rp) and near(cp):
                r0, c0 = int(round(stats[rp].median)), int(round(stats[cp].median))
                out.append((f"forall(r in {R.text}, c in {C.text})({ctx.var}[{r0}, {c0}] {op} {ctx.var}[r, c])",
                            f"{base}_pin", base))
    elif ctx.kind == "permutation" and len(ctx.index) == 1:
        P = ctx.index[0]
        for pid, base, op in _PERM_POSITIONS:
            if near(pid):
                p0 = int(round(stats[pid].median))
                out.append((f"forall(p in {P.text})({ctx.var}[{p0}] {op} {ctx.var}[p])",
                            f"{base}_pin", pid))
    return out


def synthesize_templates(problem, stats: dict, model=None, instance: str = "", seed: int = 0):
    """Return (candidates, skipped) where skipped lists ``property: reason`` lines.

    Near-constant properties become ``p = k`` (or a forall cap for
    extremum-shaped ones), monotone fractions observed at 1 become the
    universal ordering constraint, and near-constant extremum locations pin
    the extremum to that cell.
    """
    model = model or (problem.instance_model(instance) if instance in problem.instances
                      else problem.base)
    ctx = make_context(problem, model)
    cands, skipped = [], []

    def add(text, descriptor, form, pid):
        try:
            cands.append(make_candidate(text, descriptor, "template", model, "tight_fit", form,
                                        pid, instance, seed))
        except CandidateError as exc:
            skipped.append(f"{pid}: {exc}")

    for prop in catalog(problem.shape):
        st = stats.get(prop.id)
        if st is None or prop.kind == "position":
            continue
        if st.constant:
            skipped.append(f"{prop.id}: constant, implied by the model")
            continue
        if prop.kind == "monotone" and st.median == 1.0 and prop.universal is not None:
            text = prop.universal(ctx)
            if text:
                add(text, f"{prop.id.lower()}_all", "universal", prop.id)
                continue
        if not st.near_constant:
            skipped.append(f"{prop.id}: not near-constant")
            continue
        expr = prop.expr(ctx) if prop.expr is not None else None
        if expr is None or expr.scale <= 0:
            skipped.append(f"{prop.id}: not expressible over the declared variables")
            continue
        made, why = _equality(prop, expr, st)
        if made is None:
            skipped.append(why)
            continue
        add(made[0], made[1], made[2], prop.id)
    for text, descriptor, pid in _position_texts(ctx, stats):
        add(text, descriptor, "existential", pid)
    return cands, skipped
