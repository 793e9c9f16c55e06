"""Recursive-descent parser and printer for the constraint mini-language.

The grammar is the MiniZinc expression subset needed to write streamliner
constraints: integer arithmetic, comparisons, boolean connectives,
``forall``/``exists``/``sum`` over integer ranges with optional ``where``
filters, array literals and comprehensions, and a handful of globals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .ast import (
    AGGREGATES, BUILTINS, Aggregate, ArrayLit, Binary, BoolLit, Call,
    Comprehension, Generator, Ident, Index, IntLit, Range, Unary, VarRef,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"line {line}, column {col}: {message}" if line else message)


class UnboundIdentifierError(ParseError):
    def __init__(self, name: str, line: int = 0, col: int = 0, detail: str = ""):
        self.name = name
        msg = f"unbound identifier '{name}'" + (f" ({detail})" if detail else "")
        super().__init__(msg, line, col)


KEYWORDS = {"div", "mod", "not", "in", "where", "true", "false"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|%[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><->|->|<=|>=|!=|==|/\\|\\/|\.\.|[-+*=<>()\[\],|;])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "ident", "kw", "op", "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            if kind == "ident" and chunk in KEYWORDS:
                kind = "kw"
            if chunk == "==":
                chunk = "="
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_COMPARE = {"=", "!=", "<", "<=", ">", ">="}


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected '{text}' but found '{found}'")
        tok = self.tok
        self.pos += 1
        return tok

    # expression levels, loosest first
    def expr(self):
        left = self.implication()
        while self.accept("<->"):
            left = Binary("<->", left, self.implication())
        return left

    def implication(self):
        left = self.disjunction()
        if self.accept("->"):
            return Binary("->", left, self.implication())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.accept("\\/"):
            left = Binary("\\/", left, self.conjunction())
        return left

    def conjunction(self):
        left = self.negation()
        while self.accept("/\\"):
            left = Binary("/\\", left, self.negation())
        return left

    def negation(self):
        if self.accept("not"):
            return Unary("not", self.negation())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        if self.tok.kind == "op" and self.tok.text in _COMPARE:
            op = self.tok.text
            self.pos += 1
            right = self.additive()
            if self.tok.kind == "op" and self.tok.text in _COMPARE:
                raise self.error("comparison operators do not chain; add parentheses")
            return Binary(op, left, right)
        return left

    def additive(self):
        left = self.multiplicative()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.pos += 1
            left = Binary(op, left, self.multiplicative())
        return left

    def multiplicative(self):
        left = self.unary()
        while self.at("*") or self.at("div") or self.at("mod"):
            op = self.tok.text
            self.pos += 1
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        if self.accept("-"):
            return Unary("-", self.unary())
        if self.accept("+"):
            return self.unary()
        return self.primary()

    def primary(self):
        tok = self.tok
        if tok.kind == "int":
            self.pos += 1
            return IntLit(int(tok.text))
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self.pos += 1
            return BoolLit(tok.text == "true")
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        if self.at("["):
            return self.array()
        if tok.kind == "ident":
            self.pos += 1
            if self.at("("):
                return self.call(tok)
            if self.accept("["):
                indices = [self.expr()]
                while self.accept(","):
                    indices.append(self.expr())
                self.expect("]")
                return Index(tok.text, tuple(indices))
            return Ident(tok.text)
        found = tok.text or "end of input"
        raise self.error(f"unexpected '{found}'")

    def array(self):
        self.expect("[")
        if self.accept("]"):
            return ArrayLit(())
        first = self.expr()
        if self.accept("|"):
            gens = self.generators()
            self.expect("]")
            return Comprehension(first, gens)
        items = [first]
        while self.accept(","):
            items.append(self.expr())
        self.expect("]")
        return ArrayLit(tuple(items))

    def _generator_ahead(self) -> bool:
        i = self.pos
        toks = self.tokens
        while toks[i].kind == "ident":
            nxt = toks[i + 1]
            if nxt.kind == "kw" and nxt.text == "in":
                return True
            if nxt.kind == "op" and nxt.text == ",":
                i += 2
                continue
            return False
        return False

    def call(self, name_tok: Token):
        name = name_tok.text
        if name not in BUILTINS:
            raise ParseError(f"unknown function '{name}'", name_tok.line, name_tok.col)
        self.expect("(")
        if name in AGGREGATES and self._generator_ahead():
            gens = self.generators()
            self.expect(")")
            self.expect("(")
            body = self.expr()
            self.expect(")")
            return Aggregate(name, gens, body)
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        lo, hi = BUILTINS[name]
        if not lo <= len(args) <= hi:
            raise ParseError(f"{name} takes {lo}..{hi} arguments, got {len(args)}",
                             name_tok.line, name_tok.col)
        return Call(name, tuple(args))

    def generators(self) -> tuple[Generator, ...]:
        gens = [self.generator()]
        while self.at(",") and self._generator_ahead_after_comma():
            self.pos += 1
            gens.append(self.generator())
        return tuple(gens)

    def _generator_ahead_after_comma(self) -> bool:
        self.pos += 1
        try:
            return self._generator_ahead()
        finally:
            self.pos -= 1

    def generator(self) -> Generator:
        names = []
        while True:
            if self.tok.kind != "ident":
                raise self.error("expected a loop variable name")
            names.append(self.tok.text)
            self.pos += 1
            if not self.accept(","):
                break
        self.expect("in")
        lo = self.additive()
        if self.accept(".."):
            domain = Range(lo, self.additive())
        elif isinstance(lo, Ident):
            domain = lo
        else:
            raise self.error("generator domain must be 'lo..hi' or a set name")
        where = None
        if self.accept("where"):
            where = self.expr()
        return Generator(tuple(names), domain, where)


def parse_expression(text: str):
    """Parse one expression without name resolution."""
    p = _Parser(text)
    if p.tok.kind == "ident" and p.tok.text == "constraint":
        p.pos += 1
    node = p.expr()
    p.accept(";")
    if p.tok.kind != "eof":
        raise p.error(f"unexpected '{p.tok.text}' after end of expression")
    return node


def parse_constraint(text: str, model=None):
    """Parse a constraint and, when ``model`` is given, resolve every name.

    A leading ``constraint`` keyword and a trailing ``;`` are accepted and
    dropped.
    """
    node = parse_expression(text)
    if model is not None:
        check_names(node, model)
    return node


def check_names(node, model, bound: frozenset = frozenset()) -> None:
    """Raise UnboundIdentifierError for any name the model does not declare."""
    if isinstance(node, Ident):
        if node.name not in bound and not model.has_name(node.name):
            raise UnboundIdentifierError(node.name)
        return
    if isinstance(node, Index):
        if node.name in bound:
            raise UnboundIdentifierError(node.name, detail="loop variable is not an array")
        arity = model.array_arity(node.name)
        if arity is None:
            raise UnboundIdentifierError(node.name, detail="not an array")
        if arity != len(node.indices):
            raise ParseError(f"'{node.name}' has {arity} dimension(s) but is indexed with "
                             f"{len(node.indices)}")
        for ix in node.indices:
            check_names(ix, model, bound)
        return
    if isinstance(node, (Aggregate, Comprehension)):
        inner = bound
        for gen in node.generators:
            if isinstance(gen.domain, Ident):
                if gen.domain.name not in bound and not model.is_set(gen.domain.name):
                    raise UnboundIdentifierError(gen.domain.name, detail="not a set")
            else:
                check_names(gen.domain, model, inner)
            inner = inner | set(gen.names)
            if gen.where is not None:
                check_names(gen.where, model, inner)
        check_names(node.body, model, inner)
        return
    if isinstance(node, (IntLit, BoolLit, VarRef)):
        return
    from .ast import children
    for child in children(node):
        check_names(child, model, bound)


# printing

_PREC = {"<->": 1, "->": 2, "\\/": 3, "/\\": 4, "=": 6, "!=": 6, "<": 6, "<=": 6,
         ">": 6, ">=": 6, "+": 7, "-": 7, "*": 8, "div": 8, "mod": 8}
_NOT_PREC = 5
_NEG_PREC = 9
_ATOM = 10


def _prec(node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _NOT_PREC if node.op == "not" else _NEG_PREC
    return _ATOM


def _wrap(node, need: int, strict: bool) -> str:
    s = to_text(node)
    p = _prec(node)
    if p < need or (strict and p == need):
        return f"({s})"
    return s


def _gen_text(gen: Generator) -> str:
    dom = gen.domain
    dom_s = dom.name if isinstance(dom, Ident) else f"{_wrap(dom.lo, 7, False)}..{_wrap(dom.hi, 7, False)}"
    s = f"{', '.join(gen.names)} in {dom_s}"
    if gen.where is not None:
        s += f" where {to_text(gen.where)}"
    return s


def to_text(node) -> str:
    """Canonical text for ``node``; re-parses to an equal tree."""
    if isinstance(node, IntLit):
        return str(node.value)
    if isinstance(node, BoolLit):
        return "true" if node.value else "false"
    if isinstance(node, Ident):
        return node.name
    if isinstance(node, VarRef):
        return f"_v{node.slot}"
    if isinstance(node, Index):
        return f"{node.name}[{', '.join(to_text(i) for i in node.indices)}]"
    if isinstance(node, Unary):
        if node.op == "not":
            return "not " + _wrap(node.operand, _NOT_PREC, False)
        return "-" + _wrap(node.operand, _NEG_PREC, False)
    if isinstance(node, Binary):
        p = _PREC[node.op]
        if p == 6:
            return f"{_wrap(node.left, p, True)} {node.op} {_wrap(node.right, p, True)}"
        if node.op == "->":
            return f"{_wrap(node.left, p, True)} -> {_wrap(node.right, p, False)}"
        return f"{_wrap(node.left, p, False)} {node.op} {_wrap(node.right, p, True)}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, ArrayLit):
        return f"[{', '.join(to_text(i) for i in node.items)}]"
    if isinstance(node, Comprehension):
        return f"[{to_text(node.body)} | {', '.join(_gen_text(g) for g in node.generators)}]"
    if isinstance(node, Aggregate):
        gens = ", ".join(_gen_text(g) for g in node.generators)
        return f"{node.kind}({gens})({to_text(node.body)})"
    if isinstance(node, Range):
        return f"{to_text(node.lo)}..{to_text(node.hi)}"
    raise TypeError(f"cannot print {type(node).__name__}")


def normalize_text(text: str) -> str:
    """Whitespace-insensitive key: tokens joined by single spaces."""
    try:
        return " ".join(t.text for t in tokenize(text) if t.kind != "eof")
    except ParseError:
        return " ".join(text.split())
