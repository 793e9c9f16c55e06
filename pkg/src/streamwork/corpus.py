"""Problem/instance management, solver backends, corpus store and baseline cache."""
from __future__ import annotations

import json
import logging
import os
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from filelock import FileLock

from .minicp import eval_constraint
from .minicp.evaluate import EvalError, IntArray
from .minicp.ground import GroundingError
from .minicp.model import ModelError, ProblemFile
from .minicp.parser import ParseError
from .minicp.solver import ENUMERATE, FIRST_SAT, SolverError, solve
from .outcome import ERROR, SAT, TIMEOUT, UNSAT, Solution, SolveOutcome

log = logging.getLogger(__name__)

# The problem document doubles as the problem spec: id, shape kind, model
# source (builtin model or ``external:`` section) and the train/test lists.
ProblemSpec = ProblemFile

DEFAULT_TIMEOUT = 60.0
DEFAULT_TARGET_N = 500
MINIZINC_ENV = "STREAMWORK_MINIZINC"


class CorpusError(RuntimeError):
    pass


class BackendError(RuntimeError):
    pass


class Backend(Protocol):
    id: str

    def solve(self, problem: ProblemSpec, instance_id: str, extra: Sequence[str] = (),
              mode: str = FIRST_SAT, limit: Optional[int] = None,
              budget: float = DEFAULT_TIMEOUT) -> SolveOutcome: ...


class BuiltinBackend:
    """Runs the in-process minicp solver."""

    def __init__(self, seed: Optional[int] = None, clock: str = "wall", node_seconds: float = 1e-4):
        self.seed = seed
        self.clock = clock
        self.node_seconds = node_seconds
        self.id = "builtin" if clock == "wall" else f"builtin-work{node_seconds:g}"

    def solve(self, problem, instance_id, extra=(), mode=FIRST_SAT, limit=None,
              budget=DEFAULT_TIMEOUT) -> SolveOutcome:
        model = problem.instance_model(instance_id)
        try:
            parsed = [model.parse(e) if isinstance(e, str) else e for e in extra]
        except ParseError as exc:
            return SolveOutcome(ERROR, 0.0, backend=self.id, seed=self.seed,
                                diagnostics=f"constraint rejected: {exc}")
        try:
            out = solve(model, parsed, mode=mode, limit=limit, budget=budget, seed=self.seed,
                        instance_id=instance_id, clock=self.clock, node_seconds=self.node_seconds)
        except (GroundingError, EvalError) as exc:
            return SolveOutcome(ERROR, 0.0, backend=self.id, seed=self.seed,
                                diagnostics=f"constraint rejected: {exc}")
        out.backend = self.id
        return out


_STAT_RE = re.compile(r"^%%%mzn-stat:\s*(\w+)=(.*)$")


def parse_minizinc_stream(text: str, instance_id: str) -> dict:
    """Parse MiniZinc ``--output-mode json`` output.

    Returns ``solutions`` (list of Solution), ``status`` (SAT/UNSAT/TIMEOUT/
    ERROR), ``exhausted`` and ``solve_time`` (from ``-s`` statistics, or None).
    """
    solutions = []
    buf: list[str] = []
    status = None
    exhausted = False
    solve_time = None
    errors = []
    for line in text.splitlines():
        stripped = line.strip()
        m = _STAT_RE.match(stripped)
        if m:
            if m.group(1) in ("solveTime", "time"):
                try:
                    solve_time = float(m.group(2))
                except ValueError:
                    pass
            continue
        if stripped.startswith("%"):
            continue
        if stripped == "----------":
            body = "\n".join(buf).strip()
            buf = []
            if body:
                doc = json.loads(body)
                arrays = {}
                for name, value in doc.items():
                    if name.startswith("_"):
                        continue
                    if isinstance(value, list):
                        arrays[name] = IntArray.from_nested(name, _ints(value))
                    else:
                        arrays[name] = IntArray(name, (), [int(value)])
                solutions.append(Solution(instance_id, arrays))
            continue
        if stripped == "==========":
            exhausted = True
            continue
        if stripped == "=====UNSATISFIABLE=====":
            status = UNSAT
            exhausted = True
            continue
        if stripped in ("=====UNKNOWN=====",):
            status = TIMEOUT
            continue
        if stripped == "=====ERROR=====":
            status = ERROR
            continue
        if stripped:
            buf.append(line)
    if buf and status is None and not solutions:
        errors.append("\n".join(buf))
    if solutions:
        status = SAT
    elif status is None:
        status = ERROR if errors else TIMEOUT
    return {"solutions": solutions, "status": status, "exhausted": exhausted,
            "solve_time": solve_time, "diagnostics": "\n".join(errors)}


def _ints(value):
    if isinstance(value, list):
        return [_ints(v) for v in value]
    if isinstance(value, bool):
        return int(value)
    return int(value)


class MiniZincBackend:
    """Adapter for a MiniZinc-compatible executable.

    The problem document needs an ``external`` section with ``model`` (a .mzn
    path) and ``data`` (instance id -> .dzn path), relative to the document.
    The executable comes from ``$STREAMWORK_MINIZINC`` (default ``minizinc``).
    """

    def __init__(self, solver_id: str = "chuffed", seed: Optional[int] = 42,
                 executable: Optional[str] = None, slack: float = 5.0):
        self.solver_id = solver_id
        self.seed = seed
        self.executable = executable or os.environ.get(MINIZINC_ENV, "minizinc")
        self.slack = slack
        self.id = f"minizinc:{solver_id}"

    def _paths(self, problem: ProblemSpec, instance_id: str) -> tuple[Path, Optional[Path]]:
        ext = problem.extra.get("external")
        if not ext:
            raise BackendError(f"problem {problem.name} has no 'external' section")
        root = problem.path.parent if problem.path else Path.cwd()
        model = root / ext["model"]
        data = ext.get("data", {}).get(instance_id)
        return model, (root / data if data else None)

    def command(self, model: Path, data: Optional[Path], mode: str, budget: float) -> list[str]:
        cmd = [self.executable, "--solver", self.solver_id, "--output-mode", "json", "-s",
               "--time-limit", str(max(1, int(round(budget * 1000))))]
        if self.seed is not None:
            cmd += ["-r", str(self.seed)]
        if mode == ENUMERATE:
            cmd.append("-a")
        cmd.append(str(model))
        if data is not None:
            cmd.append(str(data))
        return cmd

    def solve(self, problem, instance_id, extra=(), mode=FIRST_SAT, limit=None,
              budget=DEFAULT_TIMEOUT) -> SolveOutcome:
        if budget <= 0:
            raise SolverError("budget must be positive")
        if shutil.which(self.executable) is None and not Path(self.executable).exists():
            raise BackendError(f"solver executable not found: {self.executable} "
                               f"(set {MINIZINC_ENV})")
        model_path, data_path = self._paths(problem, instance_id)
        with tempfile.TemporaryDirectory() as tmp:
            model_file = Path(tmp) / "model.mzn"
            text = model_path.read_text()
            for e in extra:
                body = e.strip().rstrip(";")
                if not body.startswith("constraint"):
                    body = "constraint " + body
                text += f"\n{body};\n"
            model_file.write_text(text)
            cmd = self.command(model_file, data_path, mode, budget)
            start = time.perf_counter()
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True,
                                      timeout=budget + self.slack)
            except subprocess.TimeoutExpired:
                return SolveOutcome(TIMEOUT, budget, backend=self.id, seed=self.seed)
            except OSError as exc:
                raise BackendError(f"failed to launch {self.executable}: {exc}") from exc
            wall = time.perf_counter() - start
        parsed = parse_minizinc_stream(proc.stdout, instance_id)
        elapsed = parsed["solve_time"] if parsed["solve_time"] is not None else wall
        status = parsed["status"]
        diagnostics = parsed["diagnostics"]
        if proc.returncode != 0 and status != SAT:
            status = ERROR
            diagnostics = (diagnostics + "\n" + proc.stderr).strip()
        solutions = parsed["solutions"]
        if limit is not None:
            solutions = solutions[:limit]
        if status == SAT and elapsed > budget:
            status, solutions = TIMEOUT, []
        elapsed = min(elapsed, budget)
        return SolveOutcome(status, elapsed, solutions[0] if solutions else None, self.id,
                            self.seed, 0, solutions if mode == ENUMERATE else [],
                            parsed["exhausted"] if mode == ENUMERATE else None, diagnostics)


def make_backend(kind: str, seed: Optional[int] = None, clock: str = "wall",
                 solver_id: str = "chuffed", node_seconds: float = 1e-4):
    if kind == "builtin":
        return BuiltinBackend(seed=seed, clock=clock, node_seconds=node_seconds)
    if kind == "external":
        return MiniZincBackend(solver_id=solver_id, seed=seed)
    raise ValueError(f"unknown solver backend '{kind}'")


class BaselineCache:
    """Write-once (problem, instance) -> SolveOutcome records in a JSONL file.

    Writers serialize on a file lock; readers reload from disk when the file
    changed, so separate processes share one cache.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path) + ".lock")
        self._records: dict[tuple[str, str], SolveOutcome] = {}
        self._mtime = None

    def _reload(self) -> None:
        if not self.path.exists():
            return
        mtime = self.path.stat().st_mtime_ns
        if mtime == self._mtime:
            return
        records = {}
        for line in self.path.read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            key = (doc["problem"], doc["instance"])
            records.setdefault(key, SolveOutcome.from_dict(doc["outcome"]))
        self._records = records
        self._mtime = mtime

    def get(self, problem: str, instance: str) -> Optional[SolveOutcome]:
        self._reload()
        return self._records.get((problem, instance))

    def put(self, problem: str, instance: str, outcome: SolveOutcome) -> SolveOutcome:
        """Store ``outcome`` unless a record exists; returns the stored record."""
        with self._lock:
            self._reload()
            existing = self._records.get((problem, instance))
            if existing is not None:
                return existing
            line = json.dumps({"problem": problem, "instance": instance,
                               "outcome": outcome.to_dict()}, sort_keys=True)
            with self.path.open("a") as fh:
                fh.write(line + "\n")
            self._records[(problem, instance)] = outcome
            self._mtime = self.path.stat().st_mtime_ns
            return outcome

    def items(self):
        self._reload()
        return dict(self._records)


class CorpusStore:
    """One JSONL file of solutions per (problem, instance) plus a meta file."""

    def __init__(self, root):
        self.root = Path(root)

    def _paths(self, problem: str, instance: str) -> tuple[Path, Path]:
        base = self.root / problem
        return base / f"{instance}.jsonl", base / f"{instance}.meta.json"

    def exists(self, problem: str, instance: str) -> bool:
        return self._paths(problem, instance)[1].exists()

    def write(self, problem: str, instance: str, solutions: Sequence[Solution], meta: dict) -> None:
        data, meta_path = self._paths(problem, instance)
        data.parent.mkdir(parents=True, exist_ok=True)
        with data.open("w") as fh:
            for sol in solutions:
                fh.write(sol.to_json() + "\n")
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))

    def read(self, problem: str, instance: str) -> tuple[list[Solution], dict]:
        data, meta_path = self._paths(problem, instance)
        if not meta_path.exists():
            raise CorpusError(f"no corpus for {problem}/{instance}; run the enumerate stage")
        sols = [Solution.from_dict(json.loads(line))
                for line in data.read_text().splitlines() if line.strip()]
        return sols, json.loads(meta_path.read_text())


@dataclass
class Corpus:
    instance_id: str
    solutions: list
    exhausted: bool
    fewer_than_target: bool
    elapsed: float


def check_solution(problem: ProblemSpec, sol: Solution) -> bool:
    model = problem.instance_model(sol.instance_id)
    return all(eval_constraint(c, sol, model.params) for c in model.constraints)


def enumerate_training_corpus(problem: ProblemSpec, instance: str, target_n: int = DEFAULT_TARGET_N,
                              budget: float = DEFAULT_TIMEOUT, backend: Optional[Backend] = None,
                              store: Optional[CorpusStore] = None) -> Corpus:
    """Enumerate up to ``target_n`` solutions of a training instance.

    A stored corpus is replayed instead of re-solving; stored solutions are
    re-checked against the base constraints.
    """
    if instance not in problem.train:
        raise CorpusError(f"'{instance}' is not a training instance of {problem.name}")
    if target_n < 1:
        raise CorpusError("target_n must be >= 1")
    if store is not None and store.exists(problem.name, instance):
        sols, meta = store.read(problem.name, instance)
        for sol in sols:
            if not check_solution(problem, sol):
                raise CorpusError(f"stored solution violates the model: {sol.to_json()}")
        return Corpus(instance, sols, meta["exhausted"], meta["fewer_than_target"], meta["elapsed"])
    backend = backend or BuiltinBackend()
    out = backend.solve(problem, instance, (), mode=ENUMERATE, limit=target_n, budget=budget)
    if out.status == UNSAT:
        raise CorpusError(f"instance unsatisfiable: {problem.name}/{instance}")
    if out.status == ERROR:
        raise CorpusError(f"backend error on {problem.name}/{instance}: {out.diagnostics}")
    if not out.solutions:
        raise CorpusError(f"no solutions within budget for {problem.name}/{instance}")
    fewer = len(out.solutions) < target_n
    if fewer:
        log.warning("%s/%s: %d solutions, fewer than target %d", problem.name, instance,
                    len(out.solutions), target_n)
    corpus = Corpus(instance, list(out.solutions), bool(out.exhausted), fewer, out.elapsed)
    if store is not None:
        store.write(problem.name, instance, corpus.solutions,
                    {"exhausted": corpus.exhausted, "fewer_than_target": fewer,
                     "elapsed": out.elapsed, "target_n": target_n, "backend": out.backend,
                     "seed": out.seed, "count": len(corpus.solutions)})
    return corpus


def baseline_solve(problem: ProblemSpec, instance: str, timeout: float = DEFAULT_TIMEOUT,
                   backend: Optional[Backend] = None,
                   cache: Optional[BaselineCache] = None) -> SolveOutcome:
    """t_b(i): cached first-solution solve of the unstreamlined model."""
    if cache is not None:
        hit = cache.get(problem.name, instance)
        if hit is not None:
            return hit
    backend = backend or BuiltinBackend()
    out = backend.solve(problem, instance, (), mode=FIRST_SAT, budget=timeout)
    if out.status == TIMEOUT or out.elapsed > timeout:
        out = SolveOutcome(TIMEOUT, min(out.elapsed, timeout), None, out.backend, out.seed, out.nodes)
    if cache is not None:
        out = cache.put(problem.name, instance, out)
    return out


def streamlined_solve(problem: ProblemSpec, instance: str, extra, cap: Optional[float] = None,
                      backend: Optional[Backend] = None,
                      cache: Optional[BaselineCache] = None) -> SolveOutcome:
    """Solve with one extra constraint, capped at the cached baseline time."""
    if cache is None:
        raise CorpusError("streamlined solves need a baseline cache")
    base = cache.get(problem.name, instance)
    if base is None:
        raise CorpusError(f"no baseline cached for {problem.name}/{instance}; run baseline_solve first")
    if cap is None:
        cap = base.elapsed
    elif cap > base.elapsed:
        raise CorpusError(f"cap exceeds baseline contract ({cap} > {base.elapsed})")
    if cap <= 0:
        raise CorpusError("baseline time is zero; cannot cap a streamlined solve")
    backend = backend or BuiltinBackend()
    extras = list(extra) if isinstance(extra, (list, tuple)) else [extra]
    try:
        out = backend.solve(problem, instance, extras, mode=FIRST_SAT, budget=cap)
    except (ModelError, GroundingError) as exc:
        return SolveOutcome(ERROR, 0.0, backend=backend.id, diagnostics=str(exc))
    if out.status == TIMEOUT or out.elapsed > cap:
        out = SolveOutcome(TIMEOUT, cap, None, out.backend, out.seed, out.nodes)
    return out


def baselines_for(problem: ProblemSpec, instances: Iterable[str], cache: BaselineCache,
                  timeout: float, backend: Optional[Backend] = None) -> dict:
    return {i: baseline_solve(problem, i, timeout, backend, cache) for i in instances}
