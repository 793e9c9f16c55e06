"""Run configuration, validated before any stage runs."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

STAGES = ("enumerate", "encode", "props", "train", "correlate", "synth", "pool", "validate",
          "race", "report")


class CnnSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    channels: list[int] = [32, 64, 128]
    epochs: int = Field(100, ge=1)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    ensemble: int = Field(3, ge=1)
    retain: int = Field(6, ge=1)
    holdout: float = Field(0.2, gt=0, lt=1)
    no_signal_below: float = 0.6


class LlmSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backend: Literal["live", "replay", "stub"] = "stub"
    fixtures: Optional[str] = None          # defaults to <out>/llm_fixtures
    temperature: float = 1.0
    max_tokens: int = 4096
    n_candidates: int = 12
    cluster: Literal["llm", "signature"] = "llm"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: str = "latin_square"           # builtin name or path to a problem file
    train: Optional[list[str]] = None       # default: the problem's train list
    test: Optional[list[str]] = None
    corpus: Optional[list[str]] = None      # training instances to enumerate
    solver: Literal["builtin", "external"] = "builtin"
    solver_id: str = "chuffed"
    solver_seed: Optional[int] = None       # None: the solver's own deterministic default
    clock: Literal["wall", "work"] = "wall"
    node_seconds: float = Field(1e-4, gt=0)
    target_n: int = Field(500, ge=1)
    enumerate_timeout: float = Field(60.0, gt=0)
    baseline_timeout: float = Field(60.0, gt=0)
    cnn: CnnSettings = CnnSettings()
    llm: LlmSettings = LlmSettings()
    templates: bool = True
    stats_path: bool = True
    discovery_path: bool = True
    discovery_filters: int = Field(6, ge=0)
    synth_seeds: int = Field(1, ge=1)
    k: int = Field(3, ge=1)
    m: Union[int, Literal["all"]] = 3
    sweep_k: list[int] = [1, 2, 3, 4, 5]
    sweep_m: list[Union[int, Literal["all"]]] = [1, 2, 3, "all"]
    reallocate: bool = True
    workers: int = Field(1, ge=1)
    seed: int = 0
    out: str = "runs/default"

    @field_validator("m")
    @classmethod
    def _m_positive(cls, v):
        if v != "all" and v < 1:
            raise ValueError("m must be >= 1 or 'all'")
        return v

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=1) + "\n")
        return path


def load_config(path=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        text = Path(path).read_text()
        doc = (json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)) or {}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.model_validate(doc)
