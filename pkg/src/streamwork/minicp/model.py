"""Problem models: parameters, decision-variable declarations, base constraints.

Problem files are YAML documents::

    name: latin_square
    shape: matrix            # matrix | permutation | assignment | packing_coords
    params:
      n: 4                   # int, nested list (1-based array) or "lo..hi" set
      given: {index: ["1..n", "1..n"], values: [...]}   # explicit index sets
    variables:
      - {name: a, index: ["1..n", "1..n"], domain: "1..n"}
      - {name: rotated, index: ["Containers"], domain: bool}
    constraints:
      - "forall(i in 1..n)(alldifferent([a[i, j] | j in 1..n]))"
    encoding: {...}          # shape-kind specific, see streamwork.encode
    instances:
      train4: {params: {n: 4}}
    train: [train4]
    test: [...]
    corpus: [train4]         # training instances to enumerate (default: all)

String parameter values are expressions over earlier parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .ast import Range
from .evaluate import EvalError, IntArray, SetRange, evaluate
from .parser import ParseError, parse_constraint, parse_expression


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class VarDecl:
    name: str
    index_text: tuple[str, ...]
    domain_text: str
    ranges: tuple[tuple[int, int], ...]
    domain: tuple[int, int]

    @property
    def size(self) -> int:
        size = 1
        for lo, hi in self.ranges:
            size *= hi - lo + 1
        return size


def _eval_range(text: str, env) -> tuple[int, int]:
    value = _eval_param_expr(text, env)
    if isinstance(value, SetRange):
        return value.lo, value.hi
    raise ModelError(f"'{text}' is not an index range")


def _parse_range_text(text: str):
    lo, sep, hi = text.partition("..")
    if not sep:
        return None
    return Range(parse_expression(lo), parse_expression(hi))


def _eval_param_expr(text: str, env):
    rng = _parse_range_text(text)
    if rng is not None:
        return evaluate(rng, env)
    return evaluate(parse_expression(text), env)


def _build_param(name: str, raw, env):
    if isinstance(raw, bool):
        return int(raw)
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        value = _eval_param_expr(raw, env)
        if isinstance(value, bool):
            value = int(value)
        return value
    if isinstance(raw, list):
        return IntArray.from_nested(name, raw)
    if isinstance(raw, dict) and "values" in raw:
        ranges = [_eval_range(t, env) for t in raw["index"]]
        flat = []

        def rec(v):
            if isinstance(v, list):
                for x in v:
                    rec(x)
            else:
                flat.append(int(v))

        rec(raw["values"])
        return IntArray(name, ranges, flat)
    raise ModelError(f"parameter {name}: unsupported value {raw!r}")


@dataclass
class MiniModel:
    name: str
    raw_params: dict[str, Any]
    raw_variables: list[dict]
    constraint_texts: list[str]
    params: dict[str, Any] = field(default_factory=dict)
    variables: dict[str, VarDecl] = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    @classmethod
    def build(cls, name: str, params: Mapping, variables: list[dict],
              constraints: list[str]) -> "MiniModel":
        model = cls(name, dict(params), [dict(v) for v in variables], list(constraints))
        model._instantiate()
        return model

    def _instantiate(self) -> None:
        env: dict[str, Any] = {}
        for pname, raw in self.raw_params.items():
            try:
                env[pname] = _build_param(pname, raw, env)
            except (EvalError, ParseError) as exc:
                raise ModelError(f"parameter {pname}: {exc}") from exc
        self.params = env
        self.variables = {}
        for spec in self.raw_variables:
            vname = spec["name"]
            if vname in env:
                raise ModelError(f"variable {vname} shadows a parameter")
            index = spec.get("index", [])
            if isinstance(index, str):
                index = [index]
            dom = str(spec.get("domain", "bool"))
            ranges = tuple(_eval_range(str(t), env) for t in index)
            if dom == "bool":
                domain = (0, 1)
            else:
                domain = _eval_range(dom, env)
            if domain[0] > domain[1]:
                raise ModelError(f"variable {vname}: empty domain {dom}")
            for lo, hi in ranges:
                if lo > hi:
                    raise ModelError(f"variable {vname}: empty index range")
            self.variables[vname] = VarDecl(vname, tuple(str(t) for t in index), dom, ranges, domain)
        self.constraints = []
        for text in self.constraint_texts:
            self.constraints.append(parse_constraint(text, self))

    def with_params(self, overrides: Mapping) -> "MiniModel":
        """A copy with some raw parameters replaced; dependents are re-derived."""
        raw = dict(self.raw_params)
        raw.update(overrides)
        return MiniModel.build(self.name, raw, self.raw_variables, self.constraint_texts)

    # name-resolution protocol used by the parser
    def has_name(self, name: str) -> bool:
        return name in self.params or name in self.variables

    def array_arity(self, name: str) -> Optional[int]:
        if name in self.variables:
            return len(self.variables[name].ranges)
        value = self.params.get(name)
        if isinstance(value, IntArray):
            return len(value.ranges)
        return None

    def is_set(self, name: str) -> bool:
        return isinstance(self.params.get(name), SetRange)

    def parse(self, text: str):
        return parse_constraint(text, self)

    def env(self) -> dict:
        return dict(self.params)


@dataclass
class ProblemFile:
    """A parsed problem document: base model plus its instances."""

    name: str
    shape: str
    base: MiniModel
    encoding: dict
    instances: dict[str, dict]
    train: list[str]
    test: list[str]
    path: Optional[Path] = None
    extra: dict = field(default_factory=dict)
    corpus: list = field(default_factory=list)   # training instances to enumerate

    def instance_model(self, instance_id: str) -> MiniModel:
        if instance_id not in self.instances:
            raise ModelError(f"unknown instance '{instance_id}' for problem {self.name}")
        cache = self.__dict__.setdefault("_models", {})
        if instance_id not in cache:
            cache[instance_id] = self._build_instance(instance_id)
        return cache[instance_id]

    def _build_instance(self, instance_id: str) -> MiniModel:
        spec = self.instances[instance_id] or {}
        model = self.base.with_params(spec.get("params", {}))
        extra = spec.get("constraints", [])
        if extra:
            model = MiniModel.build(model.name, model.raw_params, model.raw_variables,
                                    model.constraint_texts + list(extra))
        return model


SHAPES = ("matrix", "permutation", "assignment", "packing_coords")


def load_problem(source) -> ProblemFile:
    """Load a problem document from a path or an already-parsed mapping."""
    path = None
    if isinstance(source, (str, Path)):
        path = Path(source)
        doc = yaml.safe_load(path.read_text())
    else:
        doc = dict(source)
    shape = doc.get("shape", "matrix")
    if shape not in SHAPES:
        raise ModelError(f"unknown shape kind '{shape}'")
    base = MiniModel.build(doc["name"], doc.get("params", {}), doc.get("variables", []),
                           doc.get("constraints", []))
    instances = doc.get("instances") or {}
    train = list(doc.get("train", []))
    test = list(doc.get("test", []))
    overlap = set(train) & set(test)
    if overlap:
        raise ModelError(f"instances in both train and test: {sorted(overlap)}")
    for iid in train + test:
        if iid not in instances:
            raise ModelError(f"instance '{iid}' listed but not defined")
    corpus = list(doc.get("corpus", train))
    stray = [i for i in corpus if i not in train]
    if stray:
        raise ModelError(f"corpus instances must be training instances: {stray}")
    known = {"name", "shape", "params", "variables", "constraints", "encoding",
             "instances", "train", "test", "corpus"}
    return ProblemFile(doc["name"], shape, base, dict(doc.get("encoding") or {}),
                       {k: dict(v or {}) for k, v in instances.items()}, train, test, path,
                       {k: v for k, v in doc.items() if k not in known}, corpus)
