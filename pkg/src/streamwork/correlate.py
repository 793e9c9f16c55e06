"""Filter/property Pearson correlations and the property relevance ranking."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def pearson(x, y) -> float:
    """Product-moment correlation; NaN when either vector has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two vectors of equal length")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationMatrix:
    filters: list                    # filter refs
    properties: list                 # property ids
    r: np.ndarray                    # len(filters) x len(properties), NaN = undefined
    n: int
    top: dict = field(default_factory=dict)   # property -> [(filter, r), ...] up to 3

    def undefined(self) -> list:
        return [(self.filters[i], self.properties[j])
                for i, j in zip(*np.nonzero(np.isnan(self.r)))]

    def get(self, filter_ref: str, prop: str) -> float:
        return float(self.r[self.filters.index(filter_ref), self.properties.index(prop)])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "filters": self.filters,
            "properties": self.properties,
            "r": [[None if math.isnan(v) else round(float(v), 12) for v in row] for row in self.r],
            "top": {p: [[f, round(v, 12)] for f, v in t] for p, t in self.top.items()},
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def correlate(records: Sequence, vectors: Sequence, solution_ids: Optional[Sequence[str]] = None,
              top_n: int = 3) -> CorrelationMatrix:
    """Pearson r of every retained filter against every property.

    ``records`` carry per-solution activations in corpus order; if
    ``solution_ids`` is given it must match the vectors' solution ids.
    """
    n = len(vectors)
    if n < 3:
        raise ValueError("correlation needs at least 3 solutions")
    if solution_ids is not None and list(solution_ids) != [v.solution_id for v in vectors]:
        raise ValueError("filters and properties cover different solution sets")
    props = list(vectors[0].values) if vectors else []
    values = np.array([[v.values[p] for p in props] for v in vectors], dtype=float)
    refs = []
    r = np.full((len(records), len(props)), math.nan)
    for i, rec in enumerate(records):
        acts = np.asarray(rec.activations, dtype=float)
        if len(acts) != n:
            raise ValueError(f"filter {rec.ref}: {len(acts)} activations for {n} solutions")
        refs.append(rec.ref)
        for j in range(len(props)):
            r[i, j] = pearson(acts, values[:, j])
    top = {}
    for j, p in enumerate(props):
        cells = [(refs[i], float(r[i, j])) for i in range(len(refs)) if not math.isnan(r[i, j])]
        cells.sort(key=lambda c: (-abs(c[1]), c[0]))
        top[p] = cells[:top_n]
    return CorrelationMatrix(refs, props, r, n, top)


@dataclass
class RankedProperty:
    id: str
    score: Optional[float]          # max |r| over retained filters, None if undefined
    tag: str                        # "implied", "near_constant" or ""
    top: list

    def to_dict(self) -> dict:
        return {"id": self.id, "score": self.score, "tag": self.tag, "top": self.top}


def rank_properties(matrix: CorrelationMatrix, stats: dict) -> list[RankedProperty]:
    """Order properties by max |r|; constant ones are tagged implied and go last.

    With no retained filters (or no defined r) near-constant properties come
    first, then the rest, each in catalog order.
    """
    ranked, implied = [], []
    for j, p in enumerate(matrix.properties):
        st = stats.get(p)
        col = matrix.r[:, j] if matrix.r.size else np.array([])
        defined = col[~np.isnan(col)] if col.size else col
        score = float(np.max(np.abs(defined))) if defined.size else None
        if st is not None and st.constant:
            implied.append(RankedProperty(p, score, "implied", matrix.top.get(p, [])))
            continue
        tag = "near_constant" if st is not None and st.near_constant else ""
        ranked.append(RankedProperty(p, score, tag, matrix.top.get(p, [])))
    order = {p: i for i, p in enumerate(matrix.properties)}
    ranked.sort(key=lambda rp: (rp.score is None, -(rp.score or 0.0), rp.tag != "near_constant",
                                order[rp.id]))
    return ranked + implied
