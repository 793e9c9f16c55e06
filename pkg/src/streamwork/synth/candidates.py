"""Candidate streamliners: construction, response parsing, dedup and JSONL storage."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from ..minicp.parser import ParseError, parse_constraint

log = logging.getLogger(__name__)

METHODS = ("llm_stats", "llm_discovery", "template")
AGGRESSIVENESS = ("conservative", "tight_fit", "aggressive")
FORMS = ("existential", "universal", "aggregate", "pairwise")
DESCRIPTOR_RE = re.compile(r"^[a-z0-9_]+$")


class CandidateError(ValueError):
    pass


def normalize_text(text: str) -> str:
    """Whitespace-normalized constraint text: runs collapse, operator padding drops.

    ``x[1]=1`` and ``x[1] = 1`` normalize identically; identifiers stay apart.
    """
    text = text.strip().rstrip(";").strip()
    if text.startswith("constraint "):
        text = text[len("constraint "):]
    out, prev = [], ""
    for tok in re.split(r"(\s+)", text):
        if not tok:
            continue
        if tok.isspace():
            prev = " "
            continue
        if prev == " " and out and _wordish(out[-1][-1]) and _wordish(tok[0]):
            out.append(" ")
        out.append(tok)
        prev = tok
    return "".join(out)


def _wordish(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


@dataclass
class Candidate:
    text: str
    descriptor: str
    method: str
    aggressiveness: str = "tight_fit"
    form: str = "universal"
    property_id: Optional[str] = None
    instance: str = ""
    seed: int = 0
    gen_params: dict = field(default_factory=dict)
    provenance: list = field(default_factory=list)    # [{instance, seed, method}]
    role: str = ""                                    # set by representative expansion

    @property
    def id(self) -> str:
        return "c" + hashlib.sha256(normalize_text(self.text).encode()).hexdigest()[:10]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["id"] = self.id
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Candidate":
        doc = {k: v for k, v in doc.items() if k != "id"}
        return cls(**doc)


def make_candidate(text: str, descriptor: str, method: str, model, aggressiveness: str = "tight_fit",
                   form: str = "universal", property_id: Optional[str] = None, instance: str = "",
                   seed: int = 0, gen_params: Optional[dict] = None) -> Candidate:
    """Validated constructor; raises CandidateError naming the offending field."""
    if not isinstance(text, str) or not text.strip():
        raise CandidateError("empty constraint text")
    if method not in METHODS:
        raise CandidateError(f"unknown method '{method}'")
    if aggressiveness not in AGGRESSIVENESS:
        raise CandidateError(f"unknown aggressiveness '{aggressiveness}'")
    if form not in FORMS:
        raise CandidateError(f"unknown form '{form}'")
    if not isinstance(descriptor, str) or not DESCRIPTOR_RE.match(descriptor):
        raise CandidateError(f"bad descriptor {descriptor!r}")
    try:
        parse_constraint(text, model)
    except ParseError as exc:
        raise CandidateError(f"constraint does not parse: {exc}") from exc
    text = " ".join(text.strip().rstrip(";").split())
    if text.startswith("constraint "):
        text = text[len("constraint "):]
    cand = Candidate(text, descriptor, method, aggressiveness, form, property_id, instance, seed,
                     dict(gen_params or {}))
    cand.provenance = [{"instance": instance, "seed": seed, "method": method}]
    return cand


def _json_arrays(text: str):
    """Yield every JSON array embedded in ``text``, tolerating surrounding prose."""
    dec = json.JSONDecoder()
    pos = 0
    while True:
        start = text.find("[", pos)
        if start < 0:
            return
        try:
            value, end = dec.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(value, list):
            yield value
        pos = end


def parse_candidates(response: str, model, method: str, instance: str = "", seed: int = 0,
                     gen_params: Optional[dict] = None) -> tuple[list[Candidate], list[str]]:
    """Extract candidates from a responder's text. Bad entries become diagnostics."""
    entries = None
    for arr in _json_arrays(response):
        if all(isinstance(e, dict) for e in arr):
            entries = arr
            break
    diagnostics = []
    if entries is None:
        log.warning("no candidate array found in response (%d chars)", len(response))
        return [], ["no JSON array of candidate objects in response"]
    out = []
    for i, entry in enumerate(entries):
        text = entry.get("constraint", entry.get("text"))
        try:
            out.append(make_candidate(
                text, entry.get("descriptor", ""), method, model,
                aggressiveness=entry.get("aggressiveness", "tight_fit"),
                form=entry.get("form", "universal"), property_id=entry.get("property"),
                instance=instance, seed=seed, gen_params=gen_params))
        except CandidateError as exc:
            diagnostics.append(f"entry {i}: {exc}")
    if not out and entries:
        log.warning("response yielded no valid candidates (%d diagnostics)", len(diagnostics))
    return out, diagnostics


def dedup(candidates: Iterable[Candidate]) -> list[Candidate]:
    """First occurrence wins; later duplicates add their provenance rows."""
    seen: dict[str, Candidate] = {}
    for c in candidates:
        key = normalize_text(c.text)
        if key in seen:
            keep = seen[key]
            for row in c.provenance:
                if row not in keep.provenance:
                    keep.provenance.append(row)
        else:
            seen[key] = c
    return list(seen.values())


def write_pool(path, candidates: Iterable[Candidate]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w") as fh:
        for c in candidates:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
    tmp.replace(path)


def read_pool(path) -> list[Candidate]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(Candidate.from_dict(json.loads(line)))
    return out
