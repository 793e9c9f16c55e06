"""Expression tree for the constraint mini-language.

Nodes are frozen dataclasses so two parses of the same text compare equal
with ``==`` and can be used as dict keys.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Index:
    name: str
    indices: tuple["Expr", ...]


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "not"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class ArrayLit:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Range:
    lo: "Expr"
    hi: "Expr"


@dataclass(frozen=True)
class Generator:
    names: tuple[str, ...]
    domain: Union[Range, Ident]
    where: Optional["Expr"] = None


@dataclass(frozen=True)
class Comprehension:
    body: "Expr"
    generators: tuple[Generator, ...]


@dataclass(frozen=True)
class Aggregate:
    """``forall``/``exists``/``sum`` in generator-call form ``kind(gens)(body)``."""

    kind: str
    generators: tuple[Generator, ...]
    body: "Expr"


@dataclass(frozen=True)
class VarRef:
    """A resolved decision-variable slot. Only produced by grounding."""

    slot: int


Expr = Union[IntLit, BoolLit, Ident, Index, Unary, Binary, Call, ArrayLit,
             Comprehension, Aggregate, VarRef]

AGGREGATES = ("forall", "exists", "sum")

# name -> (min arity, max arity); None means variadic
BUILTINS = {
    "abs": (1, 1),
    "bool2int": (1, 1),
    "max": (1, 2),
    "min": (1, 2),
    "alldifferent": (1, 1),
    "all_different": (1, 1),
    "lex_lesseq": (2, 2),
    "lex_less": (2, 2),
    "forall": (1, 1),
    "exists": (1, 1),
    "sum": (1, 1),
}

ARITH_OPS = ("+", "-", "*", "div", "mod")
COMPARISONS = ("=", "!=", "<", "<=", ">", ">=")
CONNECTIVES = ("/\\", "\\/", "->", "<->")


def children(node) -> Iterator:
    """Yield the direct sub-nodes of ``node`` (generators included)."""
    if isinstance(node, Index):
        yield from node.indices
    elif isinstance(node, Unary):
        yield node.operand
    elif isinstance(node, Binary):
        yield node.left
        yield node.right
    elif isinstance(node, (Call,)):
        yield from node.args
    elif isinstance(node, ArrayLit):
        yield from node.items
    elif isinstance(node, Range):
        yield node.lo
        yield node.hi
    elif isinstance(node, Generator):
        yield node.domain
        if node.where is not None:
            yield node.where
    elif isinstance(node, Comprehension):
        yield from node.generators
        yield node.body
    elif isinstance(node, Aggregate):
        yield from node.generators
        yield node.body


def walk(node) -> Iterator:
    yield node
    for child in children(node):
        yield from walk(child)
