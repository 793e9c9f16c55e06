"""Reference evaluator for mini-language expressions under a total assignment."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

from .ast import (
    Aggregate, ArrayLit, Binary, BoolLit, Call, Comprehension, Generator, Ident,
    Index, IntLit, Range, Unary, VarRef,
)


class EvalError(ValueError):
    pass


class IndexOutOfBounds(EvalError):
    pass


class DivisionByZero(EvalError):
    pass


@dataclass(frozen=True)
class SetRange:
    lo: int
    hi: int

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi + 1))

    def __len__(self) -> int:
        return max(0, self.hi - self.lo + 1)


class IntArray:
    """Rectangular integer array with per-dimension inclusive index ranges."""

    __slots__ = ("name", "ranges", "values", "_strides")

    def __init__(self, name: str, ranges: Sequence[tuple[int, int]], values: Sequence[int]):
        self.name = name
        self.ranges = tuple((int(lo), int(hi)) for lo, hi in ranges)
        size = 1
        strides = []
        for lo, hi in reversed(self.ranges):
            strides.append(size)
            size *= max(0, hi - lo + 1)
        self._strides = tuple(reversed(strides))
        self.values = tuple(values)
        if len(self.values) != size:
            raise ValueError(f"array {name}: expected {size} values, got {len(self.values)}")

    @classmethod
    def from_nested(cls, name: str, nested, ranges=None) -> "IntArray":
        shape = []
        probe = nested
        while isinstance(probe, (list, tuple)):
            shape.append(len(probe))
            probe = probe[0] if probe else None
        flat = list(_flatten(nested))
        if ranges is None:
            ranges = [(1, n) for n in shape]
        return cls(name, ranges, [int(v) for v in flat])

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in self.ranges)

    def offset(self, idx: Sequence[int]) -> int:
        if len(idx) != len(self.ranges):
            raise EvalError(f"{self.name}: expected {len(self.ranges)} indices, got {len(idx)}")
        off = 0
        for i, (lo, hi), stride in zip(idx, self.ranges, self._strides):
            if not lo <= i <= hi:
                raise IndexOutOfBounds(f"{self.name}{list(idx)} out of bounds {lo}..{hi}")
            off += (i - lo) * stride
        return off

    def get(self, idx: Sequence[int]) -> int:
        return self.values[self.offset(idx)]

    def indices(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(lo, hi + 1) for lo, hi in self.ranges))

    def to_nested(self):
        if not self.ranges:
            return self.values[0]
        shape = self.shape

        def build(dim, start):
            if dim == len(shape) - 1:
                return list(self.values[start:start + shape[dim]])
            step = self._strides[dim]
            return [build(dim + 1, start + k * step) for k in range(shape[dim])]

        return build(0, 0)

    def __eq__(self, other):
        return (isinstance(other, IntArray) and self.ranges == other.ranges
                and self.values == other.values)

    def __hash__(self):
        return hash((self.ranges, self.values))

    def __repr__(self):
        return f"IntArray({self.name!r}, {self.ranges}, {self.values})"


def _flatten(nested):
    if isinstance(nested, (list, tuple)):
        for item in nested:
            yield from _flatten(item)
    else:
        yield nested


def truth(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, int):
        return v != 0
    raise EvalError(f"expected a boolean, got {type(v).__name__}")


def int_div(a: int, b: int) -> int:
    if b == 0:
        raise DivisionByZero("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def int_mod(a: int, b: int) -> int:
    if b == 0:
        raise DivisionByZero("modulo by zero")
    return a - b * int_div(a, b)


def _as_int(v) -> int:
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, int):
        return v
    raise EvalError(f"expected an integer, got {type(v).__name__}")


def _as_list(v) -> list:
    if isinstance(v, list):
        return v
    if isinstance(v, IntArray):
        return list(v.values)
    if isinstance(v, SetRange):
        return list(v)
    raise EvalError(f"expected an array, got {type(v).__name__}")


def iter_bindings(generators: Sequence[Generator], env: Mapping) -> Iterator[dict]:
    """Yield environments extending ``env`` for every generator binding."""

    def rec(k: int, cur: dict):
        if k == len(generators):
            yield cur
            return
        gen = generators[k]
        domain = domain_values(gen.domain, cur)
        for combo in itertools.product(domain, repeat=len(gen.names)):
            nxt = dict(cur)
            nxt.update(zip(gen.names, combo))
            if gen.where is None or truth(evaluate(gen.where, nxt)):
                yield from rec(k + 1, nxt)

    yield from rec(0, dict(env))


def domain_values(domain, env) -> range:
    if isinstance(domain, Range):
        return range(_as_int(evaluate(domain.lo, env)), _as_int(evaluate(domain.hi, env)) + 1)
    value = env.get(domain.name)
    if isinstance(value, SetRange):
        return range(value.lo, value.hi + 1)
    raise EvalError(f"'{domain.name}' is not a set")


def evaluate(node, env: Mapping):
    """Evaluate ``node``; ``env`` maps names to ints, SetRanges or IntArrays."""
    t = type(node)
    if t is IntLit:
        return node.value
    if t is BoolLit:
        return node.value
    if t is Ident:
        try:
            return env[node.name]
        except KeyError:
            raise EvalError(f"unbound name '{node.name}'") from None
    if t is Index:
        arr = env.get(node.name)
        if not isinstance(arr, IntArray):
            raise EvalError(f"'{node.name}' is not an array")
        return arr.get([_as_int(evaluate(i, env)) for i in node.indices])
    if t is Binary:
        op = node.op
        if op == "/\\":
            return truth(evaluate(node.left, env)) and truth(evaluate(node.right, env))
        if op == "\\/":
            return truth(evaluate(node.left, env)) or truth(evaluate(node.right, env))
        if op == "->":
            return (not truth(evaluate(node.left, env))) or truth(evaluate(node.right, env))
        if op == "<->":
            return truth(evaluate(node.left, env)) == truth(evaluate(node.right, env))
        a = _as_int(evaluate(node.left, env))
        b = _as_int(evaluate(node.right, env))
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "div":
            return int_div(a, b)
        if op == "mod":
            return int_mod(a, b)
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        if op == ">=":
            return a >= b
        raise EvalError(f"unknown operator {op}")
    if t is Unary:
        v = evaluate(node.operand, env)
        if node.op == "not":
            return not truth(v)
        return -_as_int(v)
    if t is Aggregate:
        bindings = iter_bindings(node.generators, env)
        if node.kind == "forall":
            return all(truth(evaluate(node.body, b)) for b in bindings)
        if node.kind == "exists":
            return any(truth(evaluate(node.body, b)) for b in bindings)
        return sum(_as_int(evaluate(node.body, b)) for b in bindings)
    if t is Comprehension:
        return [evaluate(node.body, b) for b in iter_bindings(node.generators, env)]
    if t is ArrayLit:
        return [evaluate(item, env) for item in node.items]
    if t is Call:
        return _call(node, env)
    if t is VarRef:
        raise EvalError("grounded variable slots cannot be evaluated here")
    if t is Range:
        return SetRange(_as_int(evaluate(node.lo, env)), _as_int(evaluate(node.hi, env)))
    raise EvalError(f"cannot evaluate {t.__name__}")


def _call(node: Call, env):
    name = node.name
    args = [evaluate(a, env) for a in node.args]
    if name == "abs":
        return abs(_as_int(args[0]))
    if name == "bool2int":
        return int(truth(args[0]))
    if name in ("max", "min"):
        f = max if name == "max" else min
        if len(args) == 1:
            items = _as_list(args[0])
            if not items:
                raise EvalError(f"{name} of an empty array")
            return f(_as_int(v) for v in items)
        return f(_as_int(args[0]), _as_int(args[1]))
    if name in ("alldifferent", "all_different"):
        items = [_as_int(v) for v in _as_list(args[0])]
        return len(set(items)) == len(items)
    if name in ("lex_lesseq", "lex_less"):
        a = [_as_int(v) for v in _as_list(args[0])]
        b = [_as_int(v) for v in _as_list(args[1])]
        return a <= b if name == "lex_lesseq" else a < b
    if name == "forall":
        return all(truth(v) for v in _as_list(args[0]))
    if name == "exists":
        return any(truth(v) for v in _as_list(args[0]))
    if name == "sum":
        return sum(_as_int(v) for v in _as_list(args[0]))
    raise EvalError(f"unknown function {name}")


def eval_constraint(expr, assignment, params: Mapping) -> bool:
    """Truth value of ``expr`` with decision arrays from ``assignment``.

    ``assignment`` is a mapping of variable name to IntArray (or any object
    with an ``arrays`` attribute holding one).
    """
    arrays = getattr(assignment, "arrays", assignment)
    env = dict(params)
    env.update(arrays)
    return truth(evaluate(expr, env))
