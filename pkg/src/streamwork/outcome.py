"""Solutions and solve outcomes shared by the solver backends."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .minicp.evaluate import IntArray

SAT = "SAT"
UNSAT = "UNSAT"
TIMEOUT = "TIMEOUT"
ERROR = "ERROR"
STATUSES = (SAT, UNSAT, TIMEOUT, ERROR)


@dataclass(frozen=True, eq=False)
class Solution:
    """One feasible assignment, keyed by decision-variable name."""

    instance_id: str
    arrays: dict = field(hash=False)

    def key(self) -> tuple:
        return tuple((name, self.arrays[name].values) for name in sorted(self.arrays))

    def __eq__(self, other):
        return isinstance(other, Solution) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def to_dict(self) -> dict:
        out = {}
        for name in sorted(self.arrays):
            arr = self.arrays[name]
            entry = {"values": arr.to_nested()}
            if any(lo != 1 for lo, _ in arr.ranges):
                entry["index"] = [list(r) for r in arr.ranges]
            out[name] = entry
        return {"instance": self.instance_id, "arrays": out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Solution":
        arrays = {}
        for name, entry in doc["arrays"].items():
            ranges = [tuple(r) for r in entry["index"]] if "index" in entry else None
            values = entry["values"]
            if not isinstance(values, list):
                arrays[name] = IntArray(name, (), [int(values)])
            else:
                arrays[name] = IntArray.from_nested(name, values, ranges)
        return cls(doc["instance"], arrays)

    def raw_text(self) -> str:
        """Original-shape rendering used in prompt payloads."""
        parts = []
        for name in sorted(self.arrays):
            parts.append(f"{name} = {json.dumps(self.arrays[name].to_nested())}")
        return "; ".join(parts)


@dataclass
class SolveOutcome:
    status: str
    elapsed: float
    solution: Optional[Solution] = None
    backend: str = "builtin"
    seed: Optional[int] = None
    nodes: int = 0
    solutions: list = field(default_factory=list)
    exhausted: Optional[bool] = None
    diagnostics: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status}")
        if self.status == SAT and self.solution is None:
            raise ValueError("SAT outcome without a solution")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "elapsed": self.elapsed,
            "solution": self.solution.to_dict() if self.solution else None,
            "backend": self.backend,
            "seed": self.seed,
            "nodes": self.nodes,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveOutcome":
        sol = Solution.from_dict(doc["solution"]) if doc.get("solution") else None
        return cls(doc["status"], float(doc["elapsed"]), sol, doc.get("backend", "builtin"),
                   doc.get("seed"), int(doc.get("nodes", 0)), diagnostics=doc.get("diagnostics", ""))
