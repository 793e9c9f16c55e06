"""Solution -> tensor encoders, one per shape kind.

Tensors are float arrays of shape (C, H, W) with cells in [0, 1]:

* ``matrix``: C=1, the 2-D decision array divided by its declared domain max.
* ``permutation``: C=1, n x n with a 1 at (p, x[p]).
* ``assignment``: one channel per value; cell (c, entity, slot) = 1 when the
  entity is assigned value c in that slot (golfer x week x group).
* ``packing_coords``: C=1 deck grid, rows are y (Bottom), columns are x
  (Left); a cell holds class / max class of the covering container.

The ``encoding`` section of a problem document names the variables and
parameters each encoder reads (see the problem YAML files).
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .minicp.evaluate import IntArray


class EncodingError(ValueError):
    pass


@dataclass
class SolutionTensor:
    kind: str
    data: np.ndarray

    @property
    def dims(self) -> tuple:
        c, h, w = self.data.shape
        return (h, w) if c == 1 else (h, w, c)


def _var(problem, sol, key):
    name = problem.encoding.get(key)
    if name is None:
        raise EncodingError(f"problem {problem.name}: encoding needs '{key}'")
    if name not in sol.arrays:
        raise EncodingError(f"solution lacks variable '{name}'")
    return name, sol.arrays[name]


def _param(params, name):
    value = params[name]
    return value.values if isinstance(value, IntArray) else value


def encode_matrix(problem, sol, model) -> np.ndarray:
    name, arr = _var(problem, sol, "variable")
    grid = np.asarray(arr.to_nested(), dtype=float)
    if grid.ndim == 1:
        grid = grid[None, :]
    if grid.ndim != 2:
        raise EncodingError(f"matrix encoding needs a 2-D array, got {grid.ndim}-D")
    dmax = model.variables[name].domain[1]
    if dmax <= 0:
        raise EncodingError("matrix encoding needs a positive domain max")
    return (grid / dmax)[None]


def encode_permutation(problem, sol, model) -> np.ndarray:
    name, arr = _var(problem, sol, "variable")
    if len(arr.ranges) != 1:
        raise EncodingError("permutation encoding needs a 1-D array")
    lo, hi = model.variables[name].domain
    n = len(arr.values)
    if hi - lo + 1 != n:
        raise EncodingError(f"domain size {hi - lo + 1} differs from length {n}")
    out = np.zeros((1, n, n))
    for p, v in enumerate(arr.values):
        out[0, p, v - lo] = 1.0
    return out


def encode_assignment(problem, sol, model) -> np.ndarray:
    name, arr = _var(problem, sol, "variable")
    if len(arr.ranges) != 2:
        raise EncodingError("assignment encoding needs a 2-D array (entity x slot)")
    lo, hi = model.variables[name].domain
    grid = np.asarray(arr.to_nested(), dtype=int)
    out = np.zeros((hi - lo + 1,) + grid.shape)
    for (e, s), v in np.ndenumerate(grid):
        out[v - lo, e, s] = 1.0
    return out


def encode_packing(problem, sol, model) -> np.ndarray:
    enc = problem.encoding
    params = model.params
    _, left = _var(problem, sol, "left")
    _, bottom = _var(problem, sol, "bottom")
    rotated = sol.arrays.get(enc.get("rotated", ""), None)
    width = _param(params, enc["width"])
    length = _param(params, enc["length"])
    klass = _param(params, enc["class"])
    deck_w = int(params[enc["deck_width"]])
    deck_l = int(params[enc["deck_length"]])
    maxclass = max(klass)
    grid = np.zeros((deck_l, deck_w))
    owner = -np.ones((deck_l, deck_w), dtype=int)
    for c in range(len(left.values)):
        w, h = width[c], length[c]
        if rotated is not None and rotated.values[c]:
            w, h = h, w
        x, y = left.values[c], bottom.values[c]
        if x < 0 or y < 0 or x + w > deck_w or y + h > deck_l:
            raise EncodingError(f"container {c + 1} lies outside the deck")
        clash = owner[y:y + h, x:x + w]
        if (clash >= 0).any():
            other = int(clash[clash >= 0][0]) + 1
            raise EncodingError(f"overlap: containers {other} and {c + 1} cover the same cell")
        owner[y:y + h, x:x + w] = c
        grid[y:y + h, x:x + w] = klass[c] / maxclass
    return grid[None]


ENCODERS = {
    "matrix": encode_matrix,
    "permutation": encode_permutation,
    "assignment": encode_assignment,
    "packing_coords": encode_packing,
}


def encode(problem, sol) -> SolutionTensor:
    """Encode one solution of ``problem`` (params of its own instance)."""
    if problem.shape not in ENCODERS:
        raise EncodingError(f"unsupported shape kind '{problem.shape}'")
    if sol.instance_id in problem.instances:
        model = problem.instance_model(sol.instance_id)
    else:
        model = problem.base
    return SolutionTensor(problem.shape, ENCODERS[problem.shape](problem, sol, model))


def encode_all(problem, solutions) -> list[SolutionTensor]:
    tensors = [encode(problem, s) for s in solutions]
    shapes = {t.data.shape for t in tensors}
    if len(shapes) > 1:
        raise EncodingError(f"inconsistent tensor shapes within one instance: {sorted(shapes)}")
    return tensors


# Text grid format, shared with activation-map export:
#   # grid v1 kind=<kind> shape=C,H,W
#   one block of H lines per channel, W space-separated numbers per line,
#   blocks separated by a blank line.

def grid_to_text(data, kind: str = "grid") -> str:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    c, h, w = arr.shape
    buf = io.StringIO()
    buf.write(f"# grid v1 kind={kind} shape={c},{h},{w}\n")
    for ch in range(c):
        if ch:
            buf.write("\n")
        for row in arr[ch]:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def grid_from_text(text: str) -> tuple[str, np.ndarray]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# grid v1"):
        raise EncodingError("not a grid file")
    fields = dict(part.split("=", 1) for part in lines[0].split()[3:])
    c, h, w = (int(x) for x in fields["shape"].split(","))
    rows = [line for line in lines[1:] if line.strip()]
    if len(rows) != c * h:
        raise EncodingError(f"expected {c * h} rows, found {len(rows)}")
    data = np.array([[float(v) for v in row.split()] for row in rows]).reshape(c, h, w)
    return fields["kind"], data
