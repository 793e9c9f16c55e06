"""Two-phase validation against cached baselines, plus the test-set metrics.

Phase ``train`` filters the pool to candidates that beat the baseline on at
least one training instance and scores them; phase ``test`` measures the
survivors on held-out instances. Each (candidate, instance, phase) solve is
appended to a JSONL checkpoint as soon as it finishes, so an interrupted run
resumes without repeating work.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

from filelock import FileLock

from .corpus import CorpusError, streamlined_solve
from .outcome import ERROR, SAT, STATUSES, TIMEOUT, UNSAT

log = logging.getLogger(__name__)

TIMER_FLOOR = 1e-3      # seconds; speedup denominators never go below this
TABLE_COLUMNS = ("candidate_id", "instance_id", "phase", "status", "elapsed_s", "baseline_s", "seed")


class ValidationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ValidationRecord:
    candidate_id: str
    instance_id: str
    phase: str
    status: str
    elapsed: float
    baseline: float
    seed: Optional[int] = None
    baseline_status: str = SAT

    def __post_init__(self):
        if self.phase not in ("train", "test"):
            raise ValueError(f"unknown phase '{self.phase}'")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status '{self.status}'")
        if not self.baseline > 0:
            raise ValueError("baseline time must be positive")
        if self.elapsed > self.baseline + 1e-12:
            raise ValueError(f"record {self.candidate_id}/{self.instance_id}: elapsed "
                             f"{self.elapsed} exceeds baseline {self.baseline}")

    @property
    def key(self) -> tuple:
        return (self.candidate_id, self.instance_id, self.phase)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ValidationRecord":
        return cls(**doc)


class RecordStore:
    """Append-only JSONL of records; a completed key is never written twice."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path) + ".lock")
        self._mutex = threading.Lock()
        self._records: dict[tuple, ValidationRecord] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    rec = ValidationRecord.from_dict(json.loads(line))
                    self._records.setdefault(rec.key, rec)

    def __contains__(self, key) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def records(self, phase: Optional[str] = None) -> list[ValidationRecord]:
        return [r for r in self._records.values() if phase is None or r.phase == phase]

    def append(self, rec: ValidationRecord) -> bool:
        with self._mutex, self._lock:
            if rec.key in self._records:
                return False
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            self._records[rec.key] = rec
            return True

    def write_table(self, path) -> Path:
        return write_table(path, self.records())


def write_table(path, records: Iterable[ValidationRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in sorted(records, key=lambda r: (r.phase, r.candidate_id, r.instance_id)):
            w.writerow([r.candidate_id, r.instance_id, r.phase, r.status, repr(r.elapsed),
                        repr(r.baseline), "" if r.seed is None else r.seed])
    return path


def read_table(path) -> list[ValidationRecord]:
    with Path(path).open(newline="") as fh:
        return [ValidationRecord(row["candidate_id"], row["instance_id"], row["phase"], row["status"],
                                 float(row["elapsed_s"]), float(row["baseline_s"]),
                                 int(row["seed"]) if row["seed"] else None)
                for row in csv.DictReader(fh)]


# ------------------------------------------------------------- validation

@dataclass
class PhaseResult:
    records: list
    survivors: list            # candidates, pool order
    scores: dict               # candidate id -> training savings
    solves: int                # solves performed in this call


def _baselines(problem, instances, cache) -> dict:
    missing = [i for i in instances if cache.get(problem.name, i) is None]
    if missing:
        raise ValidationError(f"no cached baseline for {problem.name}: {', '.join(missing)}")
    return {i: cache.get(problem.name, i) for i in instances}


def _run_phase(phase, problem, candidates, instances, cache, store: RecordStore, backend=None,
               workers: int = 1, seed: Optional[int] = None) -> PhaseResult:
    base = _baselines(problem, instances, cache)
    for i, b in base.items():
        if not b.elapsed > 0:
            raise ValidationError(f"baseline time for {problem.name}/{i} is zero")
    todo = [(c, i) for c in candidates for i in instances if (c.id, i, phase) not in store]

    def work(item):
        cand, inst = item
        t_b = base[inst].elapsed
        try:
            out = streamlined_solve(problem, inst, cand.text, cap=t_b, backend=backend, cache=cache)
            status, elapsed = out.status, min(out.elapsed, t_b)
            rec_seed = out.seed if out.seed is not None else seed
        except CorpusError as exc:
            log.warning("%s on %s: %s", cand.id, inst, exc)
            status, elapsed, rec_seed = ERROR, 0.0, seed
        rec = ValidationRecord(cand.id, inst, phase, status, elapsed, t_b, rec_seed, base[inst].status)
        store.append(rec)
        return rec

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, todo))
    else:
        for item in todo:
            work(item)
    ids = {c.id for c in candidates}
    wanted = set(instances)
    records = [r for r in store.records(phase) if r.candidate_id in ids and r.instance_id in wanted]
    scores = {c.id: 0.0 for c in candidates}
    improved = set()
    for r in records:
        if r.status == SAT:
            scores[r.candidate_id] += max(0.0, r.baseline - r.elapsed)
            if r.elapsed < r.baseline:
                improved.add(r.candidate_id)
    survivors = [c for c in candidates if c.id in improved]
    return PhaseResult(records, survivors, scores, len(todo))


def validate_phase_train(problem, candidates, instances, cache, store, backend=None, workers=1,
                         seed=None) -> PhaseResult:
    """Every candidate on every training instance, capped at t_b(i).

    Survivors are SAT somewhere with t_c < t_b; the score is the sum over SAT
    instances of max(0, t_b - t_c).
    """
    return _run_phase("train", problem, candidates, instances, cache, store, backend, workers, seed)


def validate_phase_test(problem, candidates, instances, cache, store, backend=None, workers=1,
                        seed=None) -> PhaseResult:
    return _run_phase("test", problem, candidates, instances, cache, store, backend, workers, seed)


# ---------------------------------------------------------------- metrics

def per_instance_speedup(rec: ValidationRecord) -> Optional[float]:
    """t_b / t_c for SAT records (both sides SAT), else None."""
    if rec.status != SAT or rec.baseline_status != SAT:
        return None
    return rec.baseline / max(rec.elapsed, TIMER_FLOOR)


def geomean_speedup(records: Iterable[ValidationRecord]) -> tuple[Optional[float], int, Optional[float]]:
    speedups = [s for s in (per_instance_speedup(r) for r in records) if s is not None]
    if not speedups:
        return None, 0, None
    return math.exp(sum(math.log(s) for s in speedups) / len(speedups)), len(speedups), max(speedups)


def pool_ceiling(records: Iterable[ValidationRecord], baselines: dict) -> float:
    """Savings of the per-instance fastest SAT pool member (baseline if none)."""
    best = dict(baselines)
    for r in records:
        if r.status == SAT and r.instance_id in best:
            best[r.instance_id] = min(best[r.instance_id], r.elapsed)
    total = sum(baselines.values())
    if total <= 0:
        raise ValidationError("pool ceiling needs positive baseline times")
    return (total - sum(best.values())) / total


def candidate_metrics(records: Iterable[ValidationRecord]) -> dict:
    """Per candidate: status counts, geomean speedup, retained count, max speedup."""
    by_cand: dict[str, list] = {}
    for r in records:
        by_cand.setdefault(r.candidate_id, []).append(r)
    out = {}
    for cid in sorted(by_cand):
        recs = by_cand[cid]
        counts = {s: sum(1 for r in recs if r.status == s) for s in (SAT, UNSAT, TIMEOUT, ERROR)}
        kept = [r for r in recs if r.status != ERROR]
        gm, n, mx = geomean_speedup(kept)
        out[cid] = {"sat": counts[SAT], "unsat": counts[UNSAT], "timeout": counts[TIMEOUT],
                    "error": counts[ERROR], "geomean": gm, "retained": n, "max": mx}
    return out


def best_single(metrics: dict) -> Optional[str]:
    """Candidate with the highest geomean; ties by retained count, then id."""
    scored = [(m["geomean"], m["retained"], cid) for cid, m in metrics.items() if m["geomean"] is not None]
    if not scored:
        return None
    scored.sort(key=lambda t: (-t[0], -t[1], t[2]))
    return scored[0][2]


def winner_table(records: Iterable[ValidationRecord], baselines: dict) -> dict:
    """Instance -> (fastest SAT candidate or "baseline", its time)."""
    table = {i: ("baseline", t) for i, t in baselines.items()}
    for r in sorted(records, key=lambda r: r.candidate_id):
        if r.status == SAT and r.instance_id in table and r.elapsed < table[r.instance_id][1]:
            table[r.instance_id] = (r.candidate_id, r.elapsed)
    return table


@dataclass
class MetricsReport:
    candidates: dict
    best_single: Optional[str]
    pool_ceiling: float
    winners: dict
    portfolios: dict

    def to_dict(self) -> dict:
        return {"candidates": self.candidates, "best_single": self.best_single,
                "pool_ceiling": self.pool_ceiling,
                "winners": {i: list(w) for i, w in self.winners.items()},
                "portfolios": self.portfolios}


def metrics_report(records, baselines: dict, portfolios: Optional[dict] = None) -> MetricsReport:
    records = list(records)
    cm = candidate_metrics(records)
    kept = [r for r in records if r.status != ERROR]
    return MetricsReport(cm, best_single(cm), pool_ceiling(kept, baselines),
                         winner_table(kept, baselines), dict(portfolios or {}))
