"""Bundled example problems and the hardening constraint assets."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..minicp.model import ProblemFile, load_problem

BUILTIN = ("latin_square", "nqueens", "black_hole", "social_golfers", "vessel_loading")


def problem_path(name: str) -> Path:
    if name not in BUILTIN:
        raise KeyError(f"unknown builtin problem '{name}' (have: {', '.join(BUILTIN)})")
    return Path(str(resources.files(__name__).joinpath(f"{name}.yaml")))


def builtin_problem(name: str) -> ProblemFile:
    return load_problem(problem_path(name))


def hardening_constraints(name: str) -> list[str]:
    """Constraint texts from ``hardening/<name>.mzn``, one per ``constraint`` item."""
    text = resources.files(__name__).joinpath("hardening", f"{name}.mzn").read_text()
    items, current = [], []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("%") or not stripped:
            continue
        current.append(line.rstrip())
        if stripped.endswith(";"):
            items.append("\n".join(current))
            current = []
    return items
