"""Structural property catalogs, per-solution property vectors and statistics.

Every property maps one solution to a real number. Many also carry an
integer-valued constraint-language expression, so that a bound on the
property can be written down as a candidate constraint:

* ``scalar``: ``expr`` evaluates to ``value * scale``;
* ``max`` / ``min``: the property is the max (min) of ``body`` over ``gen``,
  so ``forall(gen)(body <= k)`` caps it.

Expressions use the declared index sets of the model (``1..n``,
``Containers``) so the same text applies to instances of other sizes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .minicp.evaluate import IntArray, SetRange


class PropertyError(ValueError):
    pass


@dataclass(frozen=True)
class PropExpr:
    form: str                     # scalar | max | min
    expr: str = ""                # scalar form
    gen: str = ""                 # max/min forms
    body: str = ""
    scale: int = 1

    def bound(self, op: str, k: int) -> str:
        """Constraint text stating ``property op k / scale``."""
        if self.form == "scalar":
            return f"{self.expr} {op} {k}"
        return f"forall({self.gen})({self.body} {op} {k})"

    def aggregate(self) -> str:
        """Expression whose value is ``property * scale``."""
        if self.form == "scalar":
            return self.expr
        fn = "max" if self.form == "max" else "min"
        return f"{fn}([{self.body} | {self.gen}])"


@dataclass(frozen=True)
class Prop:
    id: str
    fn: Callable
    expr: Optional[Callable] = None     # ctx -> PropExpr | None
    kind: str = "value"                 # value | monotone | position
    universal: Optional[Callable] = None    # ctx -> text of "fraction is 1"


@dataclass
class Index:
    """Textual handle on one declared index set."""

    text: str
    lo: int
    hi: int

    @property
    def is_range(self) -> bool:
        return ".." in self.text

    def bounds_text(self) -> tuple[str, str]:
        if self.is_range:
            lo, _, hi = self.text.partition("..")
            return lo.strip(), hi.strip()
        return str(self.lo), str(self.hi)

    def adjacent(self, a: str) -> tuple[str, str]:
        """Generator over positions with a successor, and the successor text."""
        lo, hi = self.bounds_text()
        return f"{a} in {lo}..{_minus1(hi)}", f"{a} + 1"

    def interior(self, a: str) -> str:
        lo, hi = self.bounds_text()
        return f"{a} in {_plus1(lo)}..{_minus1(hi)}"


def _minus1(text: str) -> str:
    return str(int(text) - 1) if text.lstrip("-").isdigit() else f"{text} - 1"


def _plus1(text: str) -> str:
    return str(int(text) + 1) if text.lstrip("-").isdigit() else f"{text} + 1"


@dataclass
class Context:
    """Names and sizes a catalog needs for one problem instance."""

    kind: str
    var: str = ""
    index: list = field(default_factory=list)
    dom_lo: int = 0
    dom_hi: int = 0
    dom_text: tuple = ("", "")
    enc: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


def make_context(problem, model=None) -> Context:
    model = model or problem.base
    kind = problem.shape
    if kind in ("matrix", "permutation", "assignment"):
        name = problem.encoding.get("variable")
        decl = model.variables[name]
    else:
        name = problem.encoding.get("left")
        decl = model.variables[name]
    idx = [Index(t, lo, hi) for t, (lo, hi) in zip(decl.index_text, decl.ranges)]
    dom_text = tuple(decl.domain_text.split("..", 1)) if ".." in decl.domain_text else \
        (str(decl.domain[0]), str(decl.domain[1]))
    return Context(kind, name, idx, decl.domain[0], decl.domain[1],
                   tuple(t.strip() for t in dom_text), dict(problem.encoding), dict(model.params))


# ---------------------------------------------------------------- matrix

def _grid(sol, ctx) -> np.ndarray:
    g = np.asarray(sol.arrays[ctx.var].to_nested(), dtype=float)
    return g[None, :] if g.ndim == 1 else g


def _argpos(g, which):
    flat = int(np.argmax(g) if which == "max" else np.argmin(g))
    return divmod(flat, g.shape[1])


def _monotone_fraction(g):
    if g.shape[1] < 2:
        return 1.0
    return float(np.mean(np.all(np.diff(g, axis=1) >= 0, axis=1)))


def _sub2x2_var(g):
    if g.shape[0] < 2 or g.shape[1] < 2:
        return 0.0
    sums = g[:-1, :-1] + g[1:, :-1] + g[:-1, 1:] + g[1:, 1:]
    return float(np.var(sums))


def _centroid(g, axis):
    total = g.sum()
    if total == 0:
        return 0.0
    coords = np.arange(1, g.shape[axis] + 1)
    weights = g.sum(axis=1 - axis)
    return float((coords * weights).sum() / total)


def _m_expr(fn):
    def wrapped(ctx):
        if len(ctx.index) != 2:
            return None
        R, C = ctx.index
        return fn(ctx, R, C, ctx.var)
    return wrapped


def _cells(R, C):
    return f"r in {R.text}, c in {C.text}"


def _square(R, C):
    return R.text == C.text and R.lo == C.lo and R.hi == C.hi


def _diag_sum(g):
    k = min(g.shape)
    return float(sum(g[i, i] for i in range(k)))


def _anti_sum(g):
    k = min(g.shape)
    return float(sum(g[i, g.shape[1] - 1 - i] for i in range(k)))


def _corner_expr(rsel, csel):
    def make(ctx, R, C, v):
        r = R.bounds_text()[rsel]
        c = C.bounds_text()[csel]
        return PropExpr("scalar", f"{v}[{r}, {c}]")
    return _m_expr(make)


MATRIX = [
    Prop("row_sums_mean", lambda g: float(g.sum(axis=1).mean()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum({_cells(R, C)})({v}[r, c])", scale=R.hi - R.lo + 1))),
    Prop("row_sums_std", lambda g: float(g.sum(axis=1).std())),
    Prop("row_sums_min", lambda g: float(g.sum(axis=1).min()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "min", gen=f"r in {R.text}", body=f"sum(c in {C.text})({v}[r, c])"))),
    Prop("row_sums_max", lambda g: float(g.sum(axis=1).max()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "max", gen=f"r in {R.text}", body=f"sum(c in {C.text})({v}[r, c])"))),
    Prop("row_sums_range", lambda g: float(np.ptp(g.sum(axis=1)))),
    Prop("col_sums_mean", lambda g: float(g.sum(axis=0).mean()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum({_cells(R, C)})({v}[r, c])", scale=C.hi - C.lo + 1))),
    Prop("col_sums_std", lambda g: float(g.sum(axis=0).std())),
    Prop("col_sums_min", lambda g: float(g.sum(axis=0).min()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "min", gen=f"c in {C.text}", body=f"sum(r in {R.text})({v}[r, c])"))),
    Prop("col_sums_max", lambda g: float(g.sum(axis=0).max()),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "max", gen=f"c in {C.text}", body=f"sum(r in {R.text})({v}[r, c])"))),
    Prop("col_sums_range", lambda g: float(np.ptp(g.sum(axis=0)))),
    Prop("total_sum", lambda g: float(g.sum()),
         _m_expr(lambda ctx, R, C, v: PropExpr("scalar", f"sum({_cells(R, C)})({v}[r, c])"))),
    Prop("main_diag_sum", _diag_sum,
         _m_expr(lambda ctx, R, C, v: PropExpr("scalar", f"sum(i in {R.text})({v}[i, i])")
                 if _square(R, C) else None)),
    Prop("anti_diag_sum", _anti_sum,
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum(i in {R.text})({v}[i, {C.bounds_text()[0]} + {C.bounds_text()[1]} - i])")
             if _square(R, C) and C.is_range else None)),
    Prop("main_diag_min", lambda g: float(min(g[i, i] for i in range(min(g.shape)))),
         _m_expr(lambda ctx, R, C, v: PropExpr("min", gen=f"i in {R.text}", body=f"{v}[i, i]")
                 if _square(R, C) else None)),
    Prop("main_diag_max", lambda g: float(max(g[i, i] for i in range(min(g.shape)))),
         _m_expr(lambda ctx, R, C, v: PropExpr("max", gen=f"i in {R.text}", body=f"{v}[i, i]")
                 if _square(R, C) else None)),
    Prop("main_diag_n_distinct", lambda g: float(len({g[i, i] for i in range(min(g.shape))}))),
    Prop("value_min", lambda g: float(g.min()),
         _m_expr(lambda ctx, R, C, v: PropExpr("min", gen=_cells(R, C), body=f"{v}[r, c]"))),
    Prop("value_max", lambda g: float(g.max()),
         _m_expr(lambda ctx, R, C, v: PropExpr("max", gen=_cells(R, C), body=f"{v}[r, c]"))),
    Prop("value_range", lambda g: float(np.ptp(g))),
    Prop("n_distinct_values", lambda g: float(len(np.unique(g)))),
    Prop("row_monotone_fraction", _monotone_fraction,
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum(r in {R.text})(bool2int(forall({C.adjacent('c')[0]})"
                       f"({v}[r, c + 1] >= {v}[r, c])))", scale=R.hi - R.lo + 1)
             if C.is_range else None), kind="monotone",
         universal=_m_expr(lambda ctx, R, C, v: f"forall(r in {R.text}, {C.adjacent('c')[0]})"
                                                f"({v}[r, c + 1] >= {v}[r, c])" if C.is_range else None)),
    Prop("col_monotone_fraction", lambda g: _monotone_fraction(g.T),
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum(c in {C.text})(bool2int(forall({R.adjacent('r')[0]})"
                       f"({v}[r + 1, c] >= {v}[r, c])))", scale=C.hi - C.lo + 1)
             if R.is_range else None), kind="monotone",
         universal=_m_expr(lambda ctx, R, C, v: f"forall({R.adjacent('r')[0]}, c in {C.text})"
                                                f"({v}[r + 1, c] >= {v}[r, c])" if R.is_range else None)),
    Prop("horizontal_adjacency_diff",
         lambda g: float(np.abs(np.diff(g, axis=1)).mean()) if g.shape[1] > 1 else 0.0,
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum(r in {R.text}, {C.adjacent('c')[0]})(abs({v}[r, c + 1] - {v}[r, c]))",
             scale=(R.hi - R.lo + 1) * (C.hi - C.lo)) if C.is_range and C.hi > C.lo else None)),
    Prop("vertical_adjacency_diff",
         lambda g: float(np.abs(np.diff(g, axis=0)).mean()) if g.shape[0] > 1 else 0.0,
         _m_expr(lambda ctx, R, C, v: PropExpr(
             "scalar", f"sum({R.adjacent('r')[0]}, c in {C.text})(abs({v}[r + 1, c] - {v}[r, c]))",
             scale=(R.hi - R.lo) * (C.hi - C.lo + 1)) if R.is_range and R.hi > R.lo else None)),
    Prop("centroid_row", lambda g: _centroid(g, 0)),
    Prop("centroid_col", lambda g: _centroid(g, 1)),
    Prop("argmax_row", lambda g: float(_argpos(g, "max")[0] + 1), kind="position"),
    Prop("argmax_col", lambda g: float(_argpos(g, "max")[1] + 1), kind="position"),
    Prop("argmin_row", lambda g: float(_argpos(g, "min")[0] + 1), kind="position"),
    Prop("argmin_col", lambda g: float(_argpos(g, "min")[1] + 1), kind="position"),
    Prop("subsquare_2x2_sum_variance", _sub2x2_var),
    Prop("top_left", lambda g: float(g[0, 0]), _corner_expr(0, 0)),
    Prop("top_right", lambda g: float(g[0, -1]), _corner_expr(0, 1)),
    Prop("bottom_left", lambda g: float(g[-1, 0]), _corner_expr(1, 0)),
    Prop("bottom_right", lambda g: float(g[-1, -1]), _corner_expr(1, 1)),
]


# ----------------------------------------------------------- permutation

def _vec(sol, ctx) -> np.ndarray:
    return np.asarray(sol.arrays[ctx.var].values, dtype=int)


def _runs(x, cmp):
    best = run = 1
    for a, b in zip(x, x[1:]):
        run = run + 1 if cmp(b, a) else 1
        best = max(best, run)
    return float(best) if len(x) else 0.0


def _p_expr(fn):
    def wrapped(ctx):
        if len(ctx.index) != 1:
            return None
        P = ctx.index[0]
        if not P.is_range:
            return None
        return fn(ctx, P, ctx.var)
    return wrapped


def _adj_sum(body):
    return _p_expr(lambda ctx, P, v: PropExpr(
        "scalar", f"sum({P.adjacent('p')[0]})({body.format(v=v)})"))


def _adj_ext(form, body):
    return _p_expr(lambda ctx, P, v: PropExpr(form, gen=P.adjacent("p")[0], body=body.format(v=v)))


def _interior_count(cond):
    return _p_expr(lambda ctx, P, v: PropExpr(
        "scalar", f"sum({P.interior('p')})(bool2int({cond.format(v=v)}))")
        if P.hi - P.lo >= 2 else None)


def _peaks(x, sign):
    return float(sum(1 for i in range(1, len(x) - 1)
                     if sign * (x[i] - x[i - 1]) > 0 and sign * (x[i] - x[i + 1]) > 0))


def _first_half(P):
    lo, hi = P.bounds_text()
    return f"p in {lo}..({lo} + {hi}) div 2"


def _half_split(x):
    # positions lo..(lo+hi) div 2 form the first half, matching _first_half
    return (len(x) + 1) // 2


PERMUTATION = [
    Prop("ascending_pairs", lambda x, c: float(np.sum(np.diff(x) > 0)),
         _adj_sum("bool2int({v}[p + 1] > {v}[p])")),
    Prop("descending_pairs", lambda x, c: float(np.sum(np.diff(x) < 0)),
         _adj_sum("bool2int({v}[p + 1] < {v}[p])")),
    Prop("ascending_run_max", lambda x, c: _runs(list(x), lambda b, a: b > a)),
    Prop("descending_run_max", lambda x, c: _runs(list(x), lambda b, a: b < a)),
    Prop("max_adjacent_diff", lambda x, c: float(np.abs(np.diff(x)).max()) if len(x) > 1 else 0.0,
         _adj_ext("max", "abs({v}[p + 1] - {v}[p])")),
    Prop("min_adjacent_diff", lambda x, c: float(np.abs(np.diff(x)).min()) if len(x) > 1 else 0.0,
         _adj_ext("min", "abs({v}[p + 1] - {v}[p])")),
    Prop("mean_adjacent_diff", lambda x, c: float(np.abs(np.diff(x)).mean()) if len(x) > 1 else 0.0,
         _p_expr(lambda ctx, P, v: PropExpr(
             "scalar", f"sum({P.adjacent('p')[0]})(abs({v}[p + 1] - {v}[p]))", scale=P.hi - P.lo)
             if P.hi > P.lo else None)),
    Prop("unit_steps_up", lambda x, c: float(np.sum(np.diff(x) == 1)),
         _adj_sum("bool2int({v}[p + 1] = {v}[p] + 1)")),
    Prop("unit_steps_down", lambda x, c: float(np.sum(np.diff(x) == -1)),
         _adj_sum("bool2int({v}[p + 1] = {v}[p] - 1)")),
    Prop("parity_changes", lambda x, c: float(np.sum(np.diff(x) % 2 != 0)),
         _adj_sum("bool2int(({v}[p + 1] - {v}[p]) mod 2 != 0)")),
    Prop("fixed_points", lambda x, c: float(np.sum(x == np.arange(c.index[0].lo, c.index[0].hi + 1))),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"sum(p in {P.text})(bool2int({v}[p] = p))"))),
    Prop("displacement_sum",
         lambda x, c: float(np.abs(x - np.arange(c.index[0].lo, c.index[0].hi + 1)).sum()),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"sum(p in {P.text})(abs({v}[p] - p))"))),
    Prop("max_displacement",
         lambda x, c: float(np.abs(x - np.arange(c.index[0].lo, c.index[0].hi + 1)).max()),
         _p_expr(lambda ctx, P, v: PropExpr("max", gen=f"p in {P.text}", body=f"abs({v}[p] - p)"))),
    Prop("inversions", lambda x, c: float(sum(1 for i in range(len(x)) for j in range(i + 1, len(x))
                                              if x[i] > x[j])),
         _p_expr(lambda ctx, P, v: PropExpr(
             "scalar", f"sum(p, p2 in {P.text} where p < p2)(bool2int({v}[p] > {v}[p2]))"))),
    Prop("n_peaks", lambda x, c: _peaks(x, 1),
         _interior_count("{v}[p] > {v}[p - 1] /\\ {v}[p] > {v}[p + 1]")),
    Prop("n_valleys", lambda x, c: _peaks(x, -1),
         _interior_count("{v}[p] < {v}[p - 1] /\\ {v}[p] < {v}[p + 1]")),
    Prop("first_value", lambda x, c: float(x[0]),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"{v}[{P.bounds_text()[0]}]"))),
    Prop("last_value", lambda x, c: float(x[-1]),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"{v}[{P.bounds_text()[1]}]"))),
    Prop("first_last_diff", lambda x, c: float(abs(x[-1] - x[0])),
         _p_expr(lambda ctx, P, v: PropExpr(
             "scalar", f"abs({v}[{P.bounds_text()[1]}] - {v}[{P.bounds_text()[0]}])"))),
    Prop("argmax_position", lambda x, c: float(int(np.argmax(x)) + c.index[0].lo), kind="position"),
    Prop("argmin_position", lambda x, c: float(int(np.argmin(x)) + c.index[0].lo), kind="position"),
    Prop("first_half_sum", lambda x, c: float(x[:_half_split(x)].sum()),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"sum({_first_half(P)})({v}[p])"))),
    Prop("first_half_max", lambda x, c: float(x[:_half_split(x)].max()),
         _p_expr(lambda ctx, P, v: PropExpr("max", gen=_first_half(P), body=f"{v}[p]"))),
    Prop("first_half_min", lambda x, c: float(x[:_half_split(x)].min()),
         _p_expr(lambda ctx, P, v: PropExpr("min", gen=_first_half(P), body=f"{v}[p]"))),
    Prop("even_position_sum", lambda x, c: float(sum(v for p, v in enumerate(x, c.index[0].lo)
                                                     if p % 2 == 0)),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"sum(p in {P.text} where p mod 2 = 0)({v}[p])"))),
    Prop("centroid_row", lambda x, c: (len(x) + 1) / 2.0),
    Prop("centroid_col", lambda x, c: float(np.mean(x - c.dom_lo + 1))),
    Prop("position_weighted_sum", lambda x, c: float(sum(p * v for p, v in enumerate(x, c.index[0].lo))),
         _p_expr(lambda ctx, P, v: PropExpr("scalar", f"sum(p in {P.text})(p * {v}[p])"))),
]


# ---------------------------------------------------------------- packing

@dataclass
class Packing:
    left: np.ndarray
    bottom: np.ndarray
    rotated: np.ndarray
    w: np.ndarray          # effective extents after rotation
    h: np.ndarray
    klass: np.ndarray
    grid: np.ndarray       # class/maxclass raster, rows = y


def _pvals(params, name):
    value = params[name]
    return np.asarray(value.values if isinstance(value, IntArray) else value, dtype=int)


def _packing(sol, ctx, tensor) -> Packing:
    enc = ctx.enc
    left = np.asarray(sol.arrays[enc["left"]].values, dtype=int)
    bottom = np.asarray(sol.arrays[enc["bottom"]].values, dtype=int)
    rot_name = enc.get("rotated")
    rotated = np.asarray(sol.arrays[rot_name].values, dtype=int) if rot_name in sol.arrays \
        else np.zeros_like(left)
    width, length = _pvals(ctx.params, enc["width"]), _pvals(ctx.params, enc["length"])
    w = np.where(rotated == 1, length, width)
    h = np.where(rotated == 1, width, length)
    return Packing(left, bottom, rotated, w, h, _pvals(ctx.params, enc["class"]), tensor.data[0])


def _boundaries(grid):
    occ = grid > 0
    return float(np.sum(occ[:, 1:] != occ[:, :-1]) + np.sum(occ[1:, :] != occ[:-1, :]))


def _class_spread(pk):
    """Mean distance of container centres from their class centroid."""
    cx = pk.left + pk.w / 2.0
    cy = pk.bottom + pk.h / 2.0
    dists = []
    for k in np.unique(pk.klass):
        sel = pk.klass == k
        mx, my = cx[sel].mean(), cy[sel].mean()
        dists.extend(np.hypot(cx[sel] - mx, cy[sel] - my))
    return float(np.mean(dists)) if dists else 0.0


def _occ_centroid(grid, axis):
    occ = (grid > 0).astype(float)
    total = occ.sum()
    if total == 0:
        return 0.0
    coords = np.arange(occ.shape[axis])
    return float((coords * occ.sum(axis=1 - axis)).sum() / total)


def _k_expr(fn):
    def wrapped(ctx):
        if len(ctx.index) != 1:
            return None
        C = ctx.index[0]
        e = ctx.enc
        right = (f"{e['left']}[c] + {e['width']}[c] * (1 - {e['rotated']}[c]) + "
                 f"{e['length']}[c] * {e['rotated']}[c]") if e.get("rotated") else \
            f"{e['left']}[c] + {e['width']}[c]"
        top = (f"{e['bottom']}[c] + {e['length']}[c] * (1 - {e['rotated']}[c]) + "
               f"{e['width']}[c] * {e['rotated']}[c]") if e.get("rotated") else \
            f"{e['bottom']}[c] + {e['length']}[c]"
        return fn(ctx, C, e, right, top)
    return wrapped


def _same_class_pairs(ctx):
    klass = _pvals(ctx.params, ctx.enc["class"])
    n = len(klass)
    return sum(1 for i in range(n) for j in range(i + 1, n) if klass[i] == klass[j])


def _class_order(pk):
    n = len(pk.klass)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if pk.klass[i] == pk.klass[j]]
    if not pairs:
        return 1.0
    return float(np.mean([pk.left[i] <= pk.left[j] for i, j in pairs]))


PACKING = [
    Prop("mean_Left_all", lambda pk: float(pk.left.mean()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c in {C.text})({e['left']}[c])", scale=C.hi - C.lo + 1))),
    Prop("std_Left_all", lambda pk: float(pk.left.std())),
    Prop("min_Left", lambda pk: float(pk.left.min()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("min", gen=f"c in {C.text}", body=f"{e['left']}[c]"))),
    Prop("max_Left", lambda pk: float(pk.left.max()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("max", gen=f"c in {C.text}", body=f"{e['left']}[c]"))),
    Prop("mean_Bottom_all", lambda pk: float(pk.bottom.mean()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c in {C.text})({e['bottom']}[c])", scale=C.hi - C.lo + 1))),
    Prop("std_Bottom_all", lambda pk: float(pk.bottom.std())),
    Prop("min_Bottom", lambda pk: float(pk.bottom.min()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("min", gen=f"c in {C.text}", body=f"{e['bottom']}[c]"))),
    Prop("max_Bottom", lambda pk: float(pk.bottom.max()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("max", gen=f"c in {C.text}", body=f"{e['bottom']}[c]"))),
    Prop("sum_Left_plus_Bottom", lambda pk: float((pk.left + pk.bottom).sum()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c in {C.text})({e['left']}[c] + {e['bottom']}[c])"))),
    Prop("max_right_edge", lambda pk: float((pk.left + pk.w).max()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("max", gen=f"c in {C.text}", body=r))),
    Prop("max_top_edge", lambda pk: float((pk.bottom + pk.h).max()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("max", gen=f"c in {C.text}", body=t))),
    Prop("sum_right_edges", lambda pk: float((pk.left + pk.w).sum()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("scalar", f"sum(c in {C.text})({r})"))),
    Prop("n_rotated", lambda pk: float(pk.rotated.sum()),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("scalar", f"sum(c in {C.text})({e['rotated']}[c])")
                 if e.get("rotated") else None)),
    Prop("n_at_left_wall", lambda pk: float(np.sum(pk.left == 0)),
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c in {C.text})(bool2int({e['left']}[c] = 0))"))),
    Prop("n_at_bottom_wall", lambda pk: float(np.sum(pk.bottom == 0)),
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c in {C.text})(bool2int({e['bottom']}[c] = 0))"))),
    Prop("first_Left", lambda pk: float(pk.left[0]),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("scalar", f"{e['left']}[{C.lo}]"))),
    Prop("first_Bottom", lambda pk: float(pk.bottom[0]),
         _k_expr(lambda ctx, C, e, r, t: PropExpr("scalar", f"{e['bottom']}[{C.lo}]"))),
    Prop("class_left_order", _class_order,
         _k_expr(lambda ctx, C, e, r, t: PropExpr(
             "scalar", f"sum(c, k in {C.text} where c < k /\\ {e['class']}[c] = {e['class']}[k])"
                       f"(bool2int({e['left']}[c] <= {e['left']}[k]))", scale=_same_class_pairs(ctx))
             if _same_class_pairs(ctx) else None), kind="monotone",
         universal=_k_expr(lambda ctx, C, e, r, t:
                           f"forall(c, k in {C.text} where c < k /\\ {e['class']}[c] = {e['class']}[k])"
                           f"({e['left']}[c] <= {e['left']}[k])" if _same_class_pairs(ctx) else None)),
    Prop("n_boundaries", lambda pk: _boundaries(pk.grid)),
    Prop("occupied_fraction", lambda pk: float(np.mean(pk.grid > 0))),
    Prop("empty_rows", lambda pk: float(np.sum(~(pk.grid > 0).any(axis=1)))),
    Prop("empty_cols", lambda pk: float(np.sum(~(pk.grid > 0).any(axis=0)))),
    Prop("occupied_centroid_x", lambda pk: _occ_centroid(pk.grid, 1)),
    Prop("occupied_centroid_y", lambda pk: _occ_centroid(pk.grid, 0)),
    Prop("class_centroid_spread", _class_spread),
    Prop("row_occupancy_std", lambda pk: float((pk.grid > 0).sum(axis=1).std())),
    Prop("col_occupancy_std", lambda pk: float((pk.grid > 0).sum(axis=0).std())),
]


CATALOGS = {
    "matrix": MATRIX,
    "assignment": MATRIX,
    "permutation": PERMUTATION,
    "packing_coords": PACKING,
}


def catalog(kind: str) -> list[Prop]:
    if kind not in CATALOGS:
        raise PropertyError(f"unsupported shape kind '{kind}'")
    return CATALOGS[kind]


def property_exprs(problem, model=None) -> dict[str, PropExpr]:
    """Expressible properties for ``problem`` (at ``model``'s sizes)."""
    ctx = make_context(problem, model)
    out = {}
    for prop in catalog(problem.shape):
        if prop.expr is not None:
            e = prop.expr(ctx)
            if e is not None and e.scale > 0:
                out[prop.id] = e
    return out


@dataclass
class PropertyVector:
    solution_id: str
    values: dict

    def to_dict(self) -> dict:
        return {"solution": self.solution_id, "values": self.values}


def compute_properties(problem, tensor, raw, solution_id: str = "", ctx: Context = None) -> PropertyVector:
    kind = problem.shape
    props = catalog(kind)
    if ctx is None:
        model = problem.instance_model(raw.instance_id) if raw.instance_id in problem.instances \
            else problem.base
        ctx = make_context(problem, model)
    if kind in ("matrix", "assignment"):
        view = _grid(raw, ctx)
        values = {p.id: p.fn(view) for p in props}
    elif kind == "permutation":
        view = _vec(raw, ctx)
        values = {p.id: p.fn(view, ctx) for p in props}
    else:
        view = _packing(raw, ctx, tensor)
        values = {p.id: p.fn(view) for p in props}
    for pid, v in values.items():
        if not math.isfinite(v):
            raise PropertyError(f"property {pid} is not finite ({v})")
    return PropertyVector(solution_id, values)


def compute_all(problem, tensors, solutions, ids=None) -> list[PropertyVector]:
    if not solutions:
        return []
    iid = solutions[0].instance_id
    model = problem.instance_model(iid) if iid in problem.instances else problem.base
    ctx = make_context(problem, model)
    ids = ids or [f"{iid}:{k}" for k in range(len(solutions))]
    return [compute_properties(problem, t, s, i, ctx) for t, s, i in zip(tensors, solutions, ids)]


# ------------------------------------------------------------ statistics

@dataclass
class PropertyStat:
    mean: float
    std: float
    min: float
    max: float
    median: float
    near_constant: bool
    constant: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def near_constant_threshold(mean: float) -> float:
    return max(0.05, 0.01 * (abs(mean) + 1))


def summarize(values) -> PropertyStat:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise PropertyError("no values to summarize")
    mean = float(arr.mean())
    std = float(arr.std())
    lo, hi = float(arr.min()), float(arr.max())
    median = float(np.sort(arr)[(arr.size - 1) // 2])
    constant = lo == hi
    if constant:
        std = 0.0
    return PropertyStat(mean, std, lo, hi, median, constant or std <= near_constant_threshold(mean),
                        constant)


def classify_properties(vectors) -> dict[str, PropertyStat]:
    """Per-property mean, population std, min, max, lower median and flags."""
    if not vectors:
        raise PropertyError("classify_properties needs at least one vector")
    if len(vectors) < 2:
        raise PropertyError("classify_properties needs at least two vectors")
    ids = list(vectors[0].values)
    return {pid: summarize([v.values[pid] for v in vectors]) for pid in ids}


def stats_to_text(stats: dict) -> str:
    return json.dumps({k: v.to_dict() for k, v in stats.items()}, indent=1, sort_keys=False)


def progression_table(per_size: dict) -> dict:
    """Per property rows of (size, mean, min, max) and a linear fit of max vs size."""
    if not per_size:
        raise PropertyError("progression table needs at least one size")
    sizes = sorted(per_size)
    props = list(per_size[sizes[0]])
    out = {}
    for pid in props:
        rows = [(s, per_size[s][pid].mean, per_size[s][pid].min, per_size[s][pid].max) for s in sizes]
        fit = None
        if len(sizes) >= 2:
            x = np.array(sizes, dtype=float)
            y = np.array([r[3] for r in rows])
            slope, intercept = np.polyfit(x, y, 1)
            resid = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
            fit = {"slope": float(slope), "intercept": float(intercept), "rmse": resid}
        out[pid] = {"rows": rows, "fit": fit}
    return out


def instance_size(tensor) -> int:
    """Size key for progression tables: the tensor height."""
    return int(tensor.data.shape[1])
