"""Constraint mini-language and a small finite-domain solver."""
from .ast import walk
from .evaluate import EvalError, IntArray, SetRange, eval_constraint, evaluate
from .model import MiniModel, ModelError, ProblemFile, VarDecl, load_problem
from .parser import ParseError, UnboundIdentifierError, parse_constraint, to_text
from .solver import ENUMERATE, FIRST_SAT, SolverError, solve

__all__ = [
    "ENUMERATE", "FIRST_SAT", "EvalError", "IntArray", "MiniModel", "ModelError",
    "ParseError", "ProblemFile", "SetRange", "SolverError", "UnboundIdentifierError",
    "VarDecl", "eval_constraint", "evaluate", "load_problem", "parse_constraint", "solve",
    "to_text", "walk",
]
