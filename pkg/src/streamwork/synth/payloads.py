"""Prompt payloads for the statistics and filter-contrast synthesis paths.

A payload is the versioned prompt prose (a text asset under ``prompts/``)
followed by a ``<data>`` block of JSON. Serialization is deterministic:
keys keep insertion order and floats are rounded to 6 decimals.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from ..minicp.evaluate import IntArray, SetRange

log = logging.getLogger(__name__)

MAX_SAMPLES = 5
STATS_PROMPT = "stats_v1"
DISCOVERY_PROMPT = "discovery_v1"
CLUSTER_PROMPT = "cluster_v1"

DEFAULT_COMBINATIONS = [
    {"form": "aggregate", "aggressiveness": "conservative"},
    {"form": "aggregate", "aggressiveness": "tight_fit"},
    {"form": "universal", "aggressiveness": "tight_fit"},
    {"form": "universal", "aggressiveness": "aggressive"},
]


@dataclass(frozen=True)
class Payload:
    kind: str          # stats | discovery | cluster
    prompt: str        # asset name, e.g. stats_v1
    data: dict

    @property
    def text(self) -> str:
        return render(self.prompt, self.data)


def prompt_text(name: str) -> str:
    return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text()


def render(prompt: str, data: dict) -> str:
    body = json.dumps(_rounded(data), indent=1, ensure_ascii=True)
    return f"{prompt_text(prompt).rstrip()}\n\n<data>\n{body}\n</data>\n"


def extract_data(text: str) -> dict:
    """Inverse of ``render`` for the data block."""
    start = text.index("<data>") + len("<data>")
    end = text.rindex("</data>")
    return json.loads(text[start:end])


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def model_text(model) -> str:
    """MiniZinc-flavoured rendering of a model's declarations and constraints."""
    lines = []
    for name, raw in model.raw_params.items():
        value = model.params[name]
        if isinstance(value, IntArray):
            lines.append(f"array[{', '.join(f'{lo}..{hi}' for lo, hi in value.ranges)}] of int: "
                         f"{name} = {json.dumps(value.to_nested())};")
        elif isinstance(value, SetRange):
            lines.append(f"set of int: {name} = {raw};")
        else:
            lines.append(f"int: {name} = {value};")
    for decl in model.variables.values():
        dom = "bool" if decl.domain_text == "bool" else decl.domain_text
        if decl.index_text:
            lines.append(f"array[{', '.join(decl.index_text)}] of var {dom}: {decl.name};")
        else:
            lines.append(f"var {dom}: {decl.name};")
    for text in model.constraint_texts:
        lines.append("constraint " + " ".join(text.split()) + ";")
    return "\n".join(lines) + "\n"


def solution_data(sol) -> dict:
    """Raw solution in original shape, with index ranges for each array."""
    return {name: {"index": [list(r) for r in arr.ranges], "values": arr.to_nested()}
            for name, arr in sorted(sol.arrays.items())}


def _definition(expr) -> Optional[dict]:
    if expr is None:
        return None
    if expr.form == "scalar":
        return {"form": "scalar", "expr": expr.expr, "scale": expr.scale}
    return {"form": expr.form, "gen": expr.gen, "body": expr.body, "scale": expr.scale}


def build_stats_payload(ranking, stats: dict, samples, progression: Optional[dict], model_txt: str,
                        exprs: Optional[dict] = None, problem: str = "", instance: str = "",
                        combinations=None, n_candidates: int = 12,
                        top: Optional[int] = None) -> Payload:
    """Statistics-path payload; properties keep the ranking order."""
    if not ranking:
        raise ValueError("stats payload needs a non-empty property ranking")
    exprs = exprs or {}
    rows = []
    chosen = list(ranking)[:top] if top else list(ranking)
    for rp in chosen:
        st = stats[rp.id]
        rows.append({
            "id": rp.id,
            "tag": rp.tag or None,
            "score": rp.score,
            "stats": {"mean": st.mean, "std": st.std, "min": st.min, "max": st.max,
                      "median": st.median},
            "filters": [[f, r] for f, r in rp.top[:3]],
            "definition": _definition(exprs.get(rp.id)),
        })
    prog = None
    if progression:
        prog = {p: {"rows": [list(r) for r in v["rows"]], "fit": v["fit"]}
                for p, v in progression.items() if p in {r["id"] for r in rows}}
    data = {
        "problem": problem,
        "instance": instance,
        "model": model_txt,
        "properties": rows,
        "near_constant": [rp.id for rp in chosen if rp.tag == "near_constant"],
        "samples": [solution_data(s) for s in list(samples)[:MAX_SAMPLES]],
        "progression": prog,
        "request": {"combinations": list(combinations or DEFAULT_COMBINATIONS),
                    "n_candidates": n_candidates},
    }
    return Payload("stats", STATS_PROMPT, data)


def build_discovery_payload(pair, corpus: dict, model_txt: str, problem: str = "",
                            instance: str = "") -> Optional[Payload]:
    """Filter-contrast payload, or None (logged) for a degenerate or empty pair.

    ``corpus`` maps solution id to Solution.
    """
    if pair.degenerate:
        log.info("discovery payload for %s suppressed: zero activation variance", pair.filter)
        return None
    if not pair.high or not pair.low:
        log.info("discovery payload for %s suppressed: empty group", pair.filter)
        return None
    data = {
        "problem": problem,
        "instance": instance,
        "filter": pair.filter,
        "model": model_txt,
        "groups": {
            "high": [solution_data(corpus[i]) for i in pair.high],
            "low": [solution_data(corpus[i]) for i in pair.low],
        },
        "request": "hypothesis and constraint",
    }
    return Payload("discovery", DISCOVERY_PROMPT, data)


def build_cluster_payload(candidates, problem: str = "") -> Payload:
    data = {"problem": problem,
            "candidates": [{"id": c.id, "constraint": c.text} for c in candidates]}
    return Payload("cluster", CLUSTER_PROMPT, data)
