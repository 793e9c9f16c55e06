"""LLM backends: live HTTP client, fixture replayer and a rule-based stub.

Every backend maps an ``LlmRequest`` to response text. Fixtures are paired
files ``<digest>.request.txt`` / ``<digest>.response.txt`` where the digest
covers the request kind, generation parameters and payload text.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx
from filelock import FileLock

from .payloads import extract_data

DEFAULT_URL = "https://api.anthropic.com/v1/messages"
API_VERSION = "2023-06-01"
DEFAULT_PARAMS = {"temperature": 1.0, "max_tokens": 4096}


class LlmError(RuntimeError):
    pass


@dataclass(frozen=True)
class LlmRequest:
    kind: str
    text: str
    params: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        head = json.dumps({"kind": self.kind, "params": self.params}, sort_keys=True)
        return hashlib.sha256((head + "\n" + self.text).encode()).hexdigest()[:20]


def request_for(payload, params: Optional[dict] = None) -> LlmRequest:
    return LlmRequest(payload.kind, payload.text, dict(params if params is not None else DEFAULT_PARAMS))


def _fixture_paths(root: Path, digest: str) -> tuple[Path, Path]:
    return root / f"{digest}.request.txt", root / f"{digest}.response.txt"


def record_fixture(root, request: LlmRequest, response: str) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    req_path, resp_path = _fixture_paths(root, request.digest)
    with FileLock(str(root / ".fixtures.lock")):
        head = json.dumps({"kind": request.kind, "params": request.params}, sort_keys=True)
        req_path.write_bytes((head + "\n" + request.text).encode())
        resp_path.write_bytes(response.encode())
    return resp_path


class ReplayBackend:
    name = "replay"

    def __init__(self, fixture_dir):
        self.root = Path(fixture_dir)

    def complete(self, request: LlmRequest) -> str:
        _, resp = _fixture_paths(self.root, request.digest)
        if not resp.exists():
            raise LlmError(f"no recorded response for request {request.digest} in {self.root}")
        return resp.read_bytes().decode()


class LiveBackend:
    """Messages-style HTTP endpoint. Every exchange is written to the fixture dir."""

    name = "live"

    def __init__(self, fixture_dir, model: Optional[str] = None, api_key: Optional[str] = None,
                 url: str = DEFAULT_URL, client: Optional[httpx.Client] = None, timeout: float = 300.0):
        self.root = Path(fixture_dir)
        self.model = model or os.environ.get("STREAMWORK_LLM_MODEL")
        self.api_key = api_key or os.environ.get("ANTHROPIC_API_KEY")
        self.url = url
        self.client = client or httpx.Client(timeout=timeout)

    def complete(self, request: LlmRequest) -> str:
        if not self.api_key:
            raise LlmError("live backend needs ANTHROPIC_API_KEY")
        if not self.model:
            raise LlmError("live backend needs a model name (STREAMWORK_LLM_MODEL)")
        body = {
            "model": self.model,
            "max_tokens": int(request.params.get("max_tokens", DEFAULT_PARAMS["max_tokens"])),
            "messages": [{"role": "user", "content": request.text}],
        }
        if "temperature" in request.params:
            body["temperature"] = request.params["temperature"]
        headers = {"x-api-key": self.api_key, "anthropic-version": API_VERSION,
                   "content-type": "application/json"}
        try:
            resp = self.client.post(self.url, json=body, headers=headers)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise LlmError(f"LLM request failed: {exc}") from exc
        doc = resp.json()
        text = "".join(part.get("text", "") for part in doc.get("content", [])
                       if part.get("type", "text") == "text")
        record_fixture(self.root, request, text)
        return text


# ------------------------------------------------------------------ stub

def _ceil(x):
    return int(math.ceil(x - 1e-9))


def _floor(x):
    return int(math.floor(x + 1e-9))


def _bound_text(defn, op, k):
    """Constraint text for ``property op k`` given a payload definition."""
    form = defn["form"]
    if form == "scalar":
        return f"{defn['expr']} {op} {k}", "aggregate"
    if (form == "max" and op == "<=") or (form == "min" and op == ">="):
        return f"forall({defn['gen']})({defn['body']} {op} {k})", "universal"
    fn = "max" if form == "max" else "min"
    return f"{fn}([{defn['body']} | {defn['gen']}]) {op} {k}", "aggregate"


def _stats_candidates(data, limit=6):
    out = []
    used = 0
    for row in data["properties"]:
        if used >= limit:
            break
        defn = row.get("definition")
        if row.get("tag") == "implied" or not defn:
            continue
        st, scale = row["stats"], defn["scale"]
        if st["max"] == st["min"]:
            continue
        used += 1
        mid = (st["min"] + st["max"]) / 2.0
        if st["median"] <= mid:
            op = "<="
            ks = {"conservative": _ceil(st["max"] * scale),
                  "tight_fit": _ceil((st["median"] + st["std"]) * scale),
                  "aggressive": _floor(st["median"] * scale)}
        else:
            op = ">="
            ks = {"conservative": _floor(st["min"] * scale),
                  "tight_fit": _floor((st["median"] - st["std"]) * scale),
                  "aggressive": _ceil(st["median"] * scale)}
        seen = set()
        for aggr, k in ks.items():
            if k in seen:
                continue
            seen.add(k)
            text, form = _bound_text(defn, op, k)
            out.append({"constraint": text, "descriptor": f"{row['id'].lower()}_{aggr}",
                        "property": row["id"], "aggressiveness": aggr, "form": form})
    return out


def _flat(values, index):
    """(index tuple, value) pairs of a nested array given its ranges."""
    out = []

    def rec(v, prefix):
        if isinstance(v, list):
            lo = index[len(prefix)][0]
            for k, item in enumerate(v):
                rec(item, prefix + (lo + k,))
        else:
            out.append((prefix, v))

    rec(values, ())
    return out


def _discovery_candidates(data, limit=3, agree=0.6, margin=0.4):
    """Pins on cells whose modal high-group value is rare in the low group."""
    high, low = data["groups"]["high"], data["groups"]["low"]
    found = []
    for name in sorted(high[0]):
        index = high[0][name]["index"]
        hcells = [dict(_flat(sol[name]["values"], index)) for sol in high]
        lcells = [dict(_flat(sol[name]["values"], index)) for sol in low]
        for idx in hcells[0]:
            if not idx:
                continue
            counts: dict = {}
            for c in hcells:
                counts[c[idx]] = counts.get(c[idx], 0) + 1
            val = min(counts, key=lambda v: (-counts[v], v))
            hf = counts[val] / len(hcells)
            lf = sum(1 for c in lcells if c[idx] == val) / len(lcells)
            if hf >= agree and hf - lf >= margin:
                found.append((-(hf - lf), name, idx, val))
    out = []
    for _, name, idx, val in sorted(found)[:limit]:
        where = ", ".join(str(i) for i in idx)
        out.append({"hypothesis": f"high group mostly has {name}[{where}] = {val}",
                    "constraint": f"{name}[{where}] = {val}",
                    "descriptor": f"{name.lower()}_pin_{'_'.join(str(i) for i in idx)}_{val}",
                    "aggressiveness": "tight_fit", "form": "existential"})
    return out


def _cluster_groups(data):
    from ..pool import signature_of_text

    groups: dict[str, list] = {}
    for c in data["candidates"]:
        groups.setdefault(signature_of_text(c["constraint"]), []).append(c["id"])
    return list(groups.values())


class StubBackend:
    """Deterministic rule-based responder, network free.

    Stats requests get bounds on the top expressible properties at three
    aggressiveness levels; discovery requests get pins on cells where the
    whole high group agrees and the low group does not; cluster requests are
    grouped by constraint signature.
    """

    name = "stub"

    def __init__(self, per_request: int = 6):
        self.per_request = per_request

    def complete(self, request: LlmRequest) -> str:
        data = extract_data(request.text)
        if request.kind == "stats":
            items = _stats_candidates(data, self.per_request)
        elif request.kind == "discovery":
            items = _discovery_candidates(data)
        elif request.kind == "cluster":
            items = _cluster_groups(data)
        else:
            raise LlmError(f"stub cannot answer '{request.kind}' requests")
        return "Candidates follow.\n" + json.dumps(items, indent=1) + "\n"


def make_llm(kind: str, fixture_dir=None, **kwargs):
    if kind == "stub":
        return StubBackend(**kwargs)
    if fixture_dir is None:
        raise LlmError(f"{kind} backend needs a fixture directory")
    if kind == "replay":
        return ReplayBackend(fixture_dir)
    if kind == "live":
        return LiveBackend(fixture_dir, **kwargs)
    raise LlmError(f"unknown LLM backend '{kind}'")
