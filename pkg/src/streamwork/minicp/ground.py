"""Ground a model into per-constraint Python predicates over variable slots.

Quantifiers and parameter lookups are expanded away; what is left is a
residual tree whose only free references are ``VarRef`` slots (or array
lookups with variable-dependent indices). Each residual is compiled into a
``lambda A: ...`` closure over the flat assignment list ``A``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

from .ast import (
    Aggregate, ArrayLit, Binary, BoolLit, Call, Comprehension, Ident, Index, IntLit,
    Range, Unary, VarRef, walk,
)
from .evaluate import (
    EvalError, IntArray, IndexOutOfBounds, SetRange, evaluate, int_div, int_mod, truth,
)


class GroundingError(ValueError):
    pass


@dataclass
class Layout:
    """Maps (array name, index) to a flat slot number."""

    bases: dict
    arrays: dict  # name -> IntArray-shaped template (values are slot ids)
    names: list  # slot -> (name, index tuple)
    domains: list  # slot -> (lo, hi)

    @classmethod
    def for_model(cls, model) -> "Layout":
        bases, arrays, names, domains = {}, {}, [], []
        for decl in model.variables.values():
            base = len(names)
            bases[decl.name] = base
            tmpl = IntArray(decl.name, decl.ranges, range(base, base + decl.size))
            arrays[decl.name] = tmpl
            for idx in tmpl.indices():
                names.append((decl.name, idx))
                domains.append(decl.domain)
        return cls(bases, arrays, names, domains)

    def slot(self, name: str, idx) -> int:
        return self.arrays[name].get(idx)

    @property
    def size(self) -> int:
        return len(self.names)


@dataclass
class GroundConstraint:
    node: object  # residual tree
    scope: tuple  # slots referenced
    check: Callable
    alldiff: Optional[tuple] = None  # slots when the constraint is a plain alldifferent


_CONST = (IntLit, BoolLit)


def _const(v):
    if isinstance(v, bool):
        return BoolLit(v)
    return IntLit(int(v))


def _is_const(node) -> bool:
    if isinstance(node, _CONST):
        return True
    if isinstance(node, ArrayLit):
        return all(_is_const(i) for i in node.items)
    return False


class Grounder:
    def __init__(self, model):
        self.model = model
        self.layout = Layout.for_model(model)
        self.params = dict(model.params)

    # partial evaluation
    def pe(self, node, env):
        t = type(node)
        if t in _CONST or t is VarRef:
            return node
        if t is Ident:
            if node.name in env:
                v = env[node.name]
            elif node.name in self.layout.arrays:
                tmpl = self.layout.arrays[node.name]
                return ArrayLit(tuple(VarRef(s) for s in tmpl.values))
            elif node.name in self.params:
                v = self.params[node.name]
            else:
                raise GroundingError(f"unbound name '{node.name}'")
            if isinstance(v, IntArray):
                return ArrayLit(tuple(IntLit(x) for x in v.values))
            if isinstance(v, SetRange):
                return ArrayLit(tuple(IntLit(x) for x in v))
            return _const(v)
        if t is Index:
            idx = tuple(self.pe(i, env) for i in node.indices)
            if all(isinstance(i, _CONST) for i in idx):
                ints = [int(i.value) for i in idx]
                if node.name in self.layout.arrays:
                    try:
                        return VarRef(self.layout.slot(node.name, ints))
                    except IndexOutOfBounds as exc:
                        raise GroundingError(str(exc)) from exc
                arr = self.params.get(node.name)
                if not isinstance(arr, IntArray):
                    raise GroundingError(f"'{node.name}' is not an array")
                try:
                    return IntLit(arr.get(ints))
                except IndexOutOfBounds as exc:
                    raise GroundingError(str(exc)) from exc
            return Index(node.name, idx)
        if t is Binary:
            left = self.pe(node.left, env)
            op = node.op
            if op in ("/\\", "\\/", "->") and isinstance(left, _CONST):
                lv = truth(left.value)
                if op == "/\\" and not lv:
                    return BoolLit(False)
                if op == "\\/" and lv:
                    return BoolLit(True)
                if op == "->" and not lv:
                    return BoolLit(True)
                return self.pe(node.right, env)
            right = self.pe(node.right, env)
            if isinstance(left, _CONST) and isinstance(right, _CONST):
                return _const(evaluate(Binary(op, left, right), {}))
            if op in ("/\\", "\\/") and isinstance(right, _CONST):
                rv = truth(right.value)
                if op == "/\\":
                    return left if rv else BoolLit(False)
                return BoolLit(True) if rv else left
            return Binary(op, left, right)
        if t is Unary:
            operand = self.pe(node.operand, env)
            if isinstance(operand, _CONST):
                return _const(evaluate(Unary(node.op, operand), {}))
            return Unary(node.op, operand)
        if t is Aggregate:
            items = [self.pe(node.body, b) for b in self._bindings(node.generators, env)]
            return self._fold_aggregate(node.kind, items)
        if t is Comprehension:
            return ArrayLit(tuple(self.pe(node.body, b)
                                  for b in self._bindings(node.generators, env)))
        if t is ArrayLit:
            return ArrayLit(tuple(self.pe(i, env) for i in node.items))
        if t is Call:
            args = tuple(self.pe(a, env) for a in node.args)
            if all(_is_const(a) for a in args):
                return _const(evaluate(Call(node.name, args), {}))
            if node.name in ("forall", "exists", "sum") and isinstance(args[0], ArrayLit):
                return self._fold_aggregate(node.name, list(args[0].items))
            return Call(node.name, args)
        raise GroundingError(f"cannot ground {t.__name__}")

    def _fold_aggregate(self, kind, items):
        if kind == "forall":
            rest = []
            for it in items:
                if isinstance(it, _CONST):
                    if not truth(it.value):
                        return BoolLit(False)
                else:
                    rest.append(it)
            if not rest:
                return BoolLit(True)
            return rest[0] if len(rest) == 1 else Call("forall", (ArrayLit(tuple(rest)),))
        if kind == "exists":
            rest = []
            for it in items:
                if isinstance(it, _CONST):
                    if truth(it.value):
                        return BoolLit(True)
                else:
                    rest.append(it)
            if not rest:
                return BoolLit(False)
            return rest[0] if len(rest) == 1 else Call("exists", (ArrayLit(tuple(rest)),))
        total = 0
        rest = []
        for it in items:
            if isinstance(it, _CONST):
                total += int(it.value)
            else:
                rest.append(it)
        if not rest:
            return IntLit(total)
        if total:
            rest.append(IntLit(total))
        return Call("sum", (ArrayLit(tuple(rest)),))

    def _bindings(self, generators, env):
        def rec(k, cur):
            if k == len(generators):
                yield cur
                return
            gen = generators[k]
            dom = gen.domain
            if isinstance(dom, Range):
                lo, hi = self.pe(dom.lo, cur), self.pe(dom.hi, cur)
                if not (isinstance(lo, IntLit) and isinstance(hi, IntLit)):
                    raise GroundingError("generator ranges must not depend on decision variables")
                values = range(lo.value, hi.value + 1)
            else:
                value = cur.get(dom.name, self.params.get(dom.name))
                if not isinstance(value, SetRange):
                    raise GroundingError(f"'{dom.name}' is not a set")
                values = range(value.lo, value.hi + 1)
            for combo in itertools.product(values, repeat=len(gen.names)):
                nxt = dict(cur)
                nxt.update(zip(gen.names, combo))
                if gen.where is not None:
                    w = self.pe(gen.where, nxt)
                    if not isinstance(w, _CONST):
                        raise GroundingError("where-clauses must not depend on decision variables")
                    if not truth(w.value):
                        continue
                yield from rec(k + 1, nxt)

        yield from rec(0, dict(env))

    # top level
    def split(self, node, env) -> list:
        """Residual conjuncts of ``node`` (top-level foralls and /\\ are split)."""
        if isinstance(node, Aggregate) and node.kind == "forall":
            out = []
            for b in self._bindings(node.generators, env):
                out.extend(self.split(node.body, b))
            return out
        if isinstance(node, Binary) and node.op == "/\\":
            return self.split(node.left, env) + self.split(node.right, env)
        residual = self.pe(node, env)
        if isinstance(residual, Call) and residual.name == "forall" and isinstance(residual.args[0], ArrayLit):
            return list(residual.args[0].items)
        return [residual]

    def ground(self, constraints) -> tuple[list, bool]:
        """Compile ``constraints``; the flag is False when one folds to false."""
        out = []
        for c in constraints:
            try:
                parts = self.split(c, {})
            except (EvalError, IndexOutOfBounds) as exc:
                raise GroundingError(str(exc)) from exc
            for r in parts:
                if isinstance(r, _CONST):
                    if not truth(r.value):
                        return [], False
                    continue
                out.append(self.compile(r))
        return out, True

    def scope_of(self, node) -> tuple:
        slots = set()
        for n in walk(node):
            if isinstance(n, VarRef):
                slots.add(n.slot)
            elif isinstance(n, Index) and n.name in self.layout.arrays:
                slots.update(self.layout.arrays[n.name].values)
        return tuple(sorted(slots))

    def compile(self, node) -> GroundConstraint:
        code = self._code(node)
        namespace = {
            "_div": int_div, "_mod": int_mod, "_alldiff": _alldiff, "_ix": self._ix,
            "_p": self._param_at, "_int": _to_int,
        }
        try:
            fn = eval(compile(f"lambda A: {code}", "<constraint>", "eval"), namespace)
        except SyntaxError as exc:  # pragma: no cover - codegen bug guard
            raise GroundingError(f"codegen failed for {code}") from exc
        alldiff = None
        if (isinstance(node, Call) and node.name in ("alldifferent", "all_different")
                and isinstance(node.args[0], ArrayLit)
                and all(isinstance(i, VarRef) for i in node.args[0].items)):
            alldiff = tuple(i.slot for i in node.args[0].items)
        return GroundConstraint(node, self.scope_of(node), fn, alldiff)

    def _ix(self, name, idx):
        return self.layout.arrays[name].get(idx)

    def _param_at(self, name, idx):
        return self.params[name].get(idx)

    def _code(self, node) -> str:
        t = type(node)
        if t is IntLit:
            return repr(node.value)
        if t is BoolLit:
            return "True" if node.value else "False"
        if t is VarRef:
            return f"A[{node.slot}]"
        if t is Index:
            idx = ", ".join(self._code(i) for i in node.indices)
            if node.name in self.layout.arrays:
                return f"A[_ix({node.name!r}, ({idx},))]"
            return f"_p({node.name!r}, ({idx},))"
        if t is Binary:
            a, b = self._code(node.left), self._code(node.right)
            op = node.op
            if op == "div":
                return f"_div({a}, {b})"
            if op == "mod":
                return f"_mod({a}, {b})"
            if op == "/\\":
                return f"(bool({a}) and bool({b}))"
            if op == "\\/":
                return f"(bool({a}) or bool({b}))"
            if op == "->":
                return f"((not {a}) or bool({b}))"
            if op == "<->":
                return f"(bool({a}) == bool({b}))"
            pyop = {"=": "==", "!=": "!="}.get(op, op)
            return f"({a} {pyop} {b})"
        if t is Unary:
            if node.op == "not":
                return f"(not {self._code(node.operand)})"
            return f"(-{self._code(node.operand)})"
        if t is ArrayLit:
            return "[" + ", ".join(self._code(i) for i in node.items) + "]"
        if t is Call:
            args = [self._code(a) for a in node.args]
            name = node.name
            if name == "abs":
                return f"abs({args[0]})"
            if name == "bool2int":
                return f"_int({args[0]})"
            if name in ("max", "min"):
                return f"{name}({', '.join(args)})"
            if name in ("alldifferent", "all_different"):
                return f"_alldiff({args[0]})"
            if name == "lex_lesseq":
                return f"({args[0]} <= {args[1]})"
            if name == "lex_less":
                return f"({args[0]} < {args[1]})"
            if name == "forall":
                return f"all({args[0]})"
            if name == "exists":
                return f"any({args[0]})"
            if name == "sum":
                return f"sum({args[0]})"
        raise GroundingError(f"cannot compile {t.__name__}")


def _alldiff(items) -> bool:
    return len(set(items)) == len(items)


def _to_int(v) -> int:
    return 1 if v else 0
