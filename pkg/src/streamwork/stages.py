"""Pipeline stages over a run directory.

Each stage reads the artifacts of the stages before it, writes its own, and
finishes by writing ``manifests/<stage>.json``. A stage whose manifest
matches the current configuration digest is skipped.

Run directory layout::

    config.json                 serialized RunConfig
    manifests/<stage>.json
    corpus/<problem>/<iid>.jsonl
    tensors/<iid>.npz           tensors + solution ids
    props/<iid>.json            property vectors and statistics; progression.json
    cnn/<iid>/                  models, filter records, accuracy
    correlate/<iid>.json        matrix, ranking, contrast pairs
    candidates/<iid>.jsonl      per-instance candidates; diagnostics.json
    pool.jsonl clusters.json validation_set.jsonl
    baselines.jsonl records.jsonl records.csv validation.json
    portfolio.json
    report/                     metrics, tables, heatmap, activation grids
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cnn import (CnnConfig, FilterRecord, generate_negatives, save_model, select_contrast_pairs,
                  train_contrastive)
from .config import STAGES, RunConfig
from .corpus import BaselineCache, CorpusStore, baselines_for, enumerate_training_corpus, make_backend
from .correlate import CorrelationMatrix, correlate, rank_properties
from .encode import encode_all, grid_to_text
from .minicp.model import load_problem
from .outcome import SAT, TIMEOUT, UNSAT
from .pool import cluster, expand_representatives, pool_across_instances
from .portfolio import (ALL, portfolio_savings, race_all, records_by_instance, best_single_plan,
                        scored_from, select_family_budget, select_simple_top_k, sweep_km, sweep_table)
from .problems import BUILTIN, builtin_problem
from .props import (PropertyStat, PropertyVector, classify_properties, compute_all, instance_size,
                    progression_table, property_exprs)
from .synth.candidates import dedup, parse_candidates, read_pool, write_pool
from .synth.llm import make_llm, request_for
from .synth.payloads import build_discovery_payload, build_stats_payload, model_text
from .synth.templates import synthesize_templates
from .valid import (RecordStore, best_single, candidate_metrics, metrics_report, per_instance_speedup,
                    validate_phase_test, validate_phase_train)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def _dump(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=False, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _load(path: Path):
    return json.loads(path.read_text())


def _clean(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class Run:
    config: RunConfig
    dir: Path

    def __post_init__(self):
        cfg = self.config
        self.problem = builtin_problem(cfg.problem) if cfg.problem in BUILTIN else load_problem(cfg.problem)
        self.train = list(cfg.train or self.problem.train)
        self.test = list(cfg.test or self.problem.test)
        self.corpus_ids = list(cfg.corpus or self.problem.corpus or self.train)

    @property
    def name(self) -> str:
        return self.problem.name

    def backend(self):
        cfg = self.config
        return make_backend(cfg.solver, seed=cfg.solver_seed, clock=cfg.clock, solver_id=cfg.solver_id,
                            node_seconds=cfg.node_seconds)

    def llm(self):
        llm = self.config.llm
        fixtures = llm.fixtures or str(self.dir / "llm_fixtures")
        return make_llm(llm.backend, fixtures if llm.backend != "stub" else None)

    def llm_params(self, seed: int) -> dict:
        llm = self.config.llm
        return {"temperature": llm.temperature, "max_tokens": llm.max_tokens, "seed": seed}

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def manifest(self, stage: str) -> Path:
        return self.path("manifests", f"{stage}.json")


# ------------------------------------------------------------------ stages

def stage_enumerate(run: Run) -> dict:
    store = CorpusStore(run.path("corpus"))
    backend = run.backend()
    out = {}
    for iid in run.corpus_ids:
        c = enumerate_training_corpus(run.problem, iid, run.config.target_n, run.config.enumerate_timeout,
                                      backend, store)
        out[iid] = {"count": len(c.solutions), "exhausted": c.exhausted,
                    "fewer_than_target": c.fewer_than_target}
    return out


def _corpus(run: Run, iid: str):
    sols, _ = CorpusStore(run.path("corpus")).read(run.name, iid)
    return sols


def _ids(iid, n):
    return [f"{iid}:{k}" for k in range(n)]


def stage_encode(run: Run) -> dict:
    out = {}
    for iid in run.corpus_ids:
        sols = _corpus(run, iid)
        tensors = encode_all(run.problem, sols)
        data = np.stack([t.data for t in tensors])
        path = run.path("tensors", f"{iid}.npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, data=data, ids=np.array(_ids(iid, len(sols))))
        out[iid] = {"shape": list(data.shape)}
    return out


def _tensors(run: Run, iid: str):
    with np.load(run.path("tensors", f"{iid}.npz")) as z:
        return z["data"], [str(i) for i in z["ids"]]


def stage_props(run: Run) -> dict:
    from .encode import SolutionTensor

    per_size, out = {}, {}
    for iid in run.corpus_ids:
        sols = _corpus(run, iid)
        data, ids = _tensors(run, iid)
        tensors = [SolutionTensor(run.problem.shape, d) for d in data]
        vectors = compute_all(run.problem, tensors, sols, ids)
        stats = classify_properties(vectors)
        per_size[instance_size(tensors[0])] = stats
        _dump(run.path("props", f"{iid}.json"),
              {"vectors": [v.to_dict() for v in vectors], "stats": {k: s.to_dict() for k, s in stats.items()}})
        out[iid] = {"near_constant": sorted(k for k, s in stats.items() if s.near_constant and not s.constant)}
    prog = progression_table(per_size) if len(per_size) >= 2 else None
    _dump(run.path("props", "progression.json"), prog)
    return out


def _props(run: Run, iid: str):
    doc = _load(run.path("props", f"{iid}.json"))
    vectors = [PropertyVector(v["solution"], v["values"]) for v in doc["vectors"]]
    stats = {k: PropertyStat(**s) for k, s in doc["stats"].items()}
    return vectors, stats


def _progression(run: Run):
    return _load(run.path("props", "progression.json"))


def stage_train(run: Run) -> dict:
    cfg = run.config
    out = {}
    for iid in run.corpus_ids:
        data, ids = _tensors(run, iid)
        negs = generate_negatives(list(data), seed=cfg.seed)
        cc = CnnConfig(channels=tuple(cfg.cnn.channels), epochs=cfg.cnn.epochs, lr=cfg.cnn.lr,
                       batch_size=cfg.cnn.batch_size, seed=cfg.seed, ensemble=cfg.cnn.ensemble,
                       retain=cfg.cnn.retain, holdout=cfg.cnn.holdout,
                       no_signal_below=cfg.cnn.no_signal_below)
        res = train_contrastive(list(data), [n.data for n in negs], cc)
        root = run.path("cnn", iid)
        root.mkdir(parents=True, exist_ok=True)
        for seed, model in res.models.items():
            save_model(root / f"seed{seed}.pt", model, cc, data.shape[1])
        _dump(root / "filters.json", [
            {"seed": r.seed, "layer": r.layer, "filter": r.filter, "variance": r.variance,
             "activations": r.activations, "mean_map": r.mean_map} for r in res.records])
        summary = {"accuracy": {str(k): v for k, v in res.accuracy.items()}, "no_signal": res.no_signal,
                   "negatives": sorted({n.tag for n in negs})}
        _dump(root / "summary.json", summary)
        out[iid] = summary
    return out


def _filters(run: Run, iid: str) -> list[FilterRecord]:
    return [FilterRecord(d["seed"], d["layer"], d["filter"], np.asarray(d["activations"]), d["variance"],
                         np.asarray(d["mean_map"])) for d in _load(run.path("cnn", iid, "filters.json"))]


def stage_correlate(run: Run) -> dict:
    out = {}
    for iid in run.corpus_ids:
        vectors, stats = _props(run, iid)
        records = _filters(run, iid)
        summary = _load(run.path("cnn", iid, "summary.json"))
        used = [] if summary["no_signal"] else records
        ids = [v.solution_id for v in vectors]
        if len(vectors) >= 3:
            matrix = correlate(used, vectors, ids)
        else:
            props = list(vectors[0].values)
            matrix = CorrelationMatrix([], props, np.zeros((0, len(props))), len(vectors))
        ranking = rank_properties(matrix, stats)
        try:
            pairs = select_contrast_pairs(used, ids)
        except ValueError as exc:
            log.info("%s: no contrast pairs (%s)", iid, exc)
            pairs = []
        _dump(run.path("correlate", f"{iid}.json"), {
            "matrix": matrix.to_dict(),
            "ranking": [rp.to_dict() for rp in ranking],
            "pairs": [p.__dict__ for p in pairs],
            "filter_variance": {r.ref: r.variance for r in used},
        })
        out[iid] = {"top": [rp.id for rp in ranking[:5]], "pairs": len(pairs), "no_signal": summary["no_signal"]}
    return out


def stage_synth(run: Run) -> dict:
    from .cnn import ContrastPair
    from .correlate import RankedProperty

    cfg = run.config
    llm = run.llm() if (cfg.stats_path or cfg.discovery_path) else None
    prog = _progression(run)
    out, diagnostics = {}, {}
    for iid in run.corpus_ids:
        model = run.problem.instance_model(iid)
        mtext = model_text(model)
        exprs = property_exprs(run.problem, model)
        sols = _corpus(run, iid)
        _, ids = _tensors(run, iid)
        by_id = dict(zip(ids, sols))
        vectors, stats = _props(run, iid)
        doc = _load(run.path("correlate", f"{iid}.json"))
        ranking = [RankedProperty(r["id"], _clean(r["score"]), r["tag"], [tuple(t) for t in r["top"]])
                   for r in doc["ranking"]]
        pairs = [ContrastPair(**p) for p in doc["pairs"]]
        variance = doc["filter_variance"]
        pairs.sort(key=lambda p: (-variance.get(p.filter, 0.0), p.filter))
        cands, diags = [], []
        for s in range(cfg.synth_seeds):
            seed = cfg.seed + s
            params = run.llm_params(seed)
            if cfg.templates:
                t, skipped = synthesize_templates(run.problem, stats, model, iid, seed)
                cands += t
                diags += [f"template {x}" for x in skipped]
            if cfg.stats_path:
                payload = build_stats_payload(ranking, stats, sols, prog, mtext, exprs, run.name, iid,
                                              n_candidates=cfg.llm.n_candidates)
                got, d = parse_candidates(llm.complete(request_for(payload, params)), model, "llm_stats",
                                          iid, seed, params)
                cands += got
                diags += [f"stats {x}" for x in d]
            if cfg.discovery_path:
                for pair in pairs[:cfg.discovery_filters]:
                    payload = build_discovery_payload(pair, by_id, mtext, run.name, iid)
                    if payload is None:
                        diags.append(f"discovery {pair.filter}: degenerate pair")
                        continue
                    got, d = parse_candidates(llm.complete(request_for(payload, params)), model,
                                              "llm_discovery", iid, seed, params)
                    cands += got
                    diags += [f"discovery {pair.filter} {x}" for x in d]
        cands = dedup(cands)
        write_pool(run.path("candidates", f"{iid}.jsonl"), cands)
        diagnostics[iid] = diags
        out[iid] = {m: sum(1 for c in cands if c.method == m)
                    for m in ("template", "llm_stats", "llm_discovery")}
    _dump(run.path("candidates", "diagnostics.json"), diagnostics)
    return out


def stage_pool(run: Run) -> dict:
    cfg = run.config
    per = {iid: read_pool(run.path("candidates", f"{iid}.jsonl")) for iid in run.corpus_ids}
    pool = pool_across_instances(per)
    write_pool(run.path("pool.jsonl"), pool)
    backend = run.llm() if cfg.llm.cluster == "llm" else None
    clusters, diags = cluster(pool, backend, run.llm_params(cfg.seed))
    largest = max(run.corpus_ids, key=lambda i: _tensors(run, i)[0].shape[2])
    scales = {k: e.scale for k, e in property_exprs(run.problem, run.problem.instance_model(largest)).items()}
    prog = _progression(run)
    reps = []
    for cl in clusters:
        reps += expand_representatives(cl, prog, scales)
    reps = dedup(reps)
    write_pool(run.path("validation_set.jsonl"), reps)
    _dump(run.path("clusters.json"), {"clusters": [c.to_dict() for c in clusters], "diagnostics": diags})
    return {"pool": len(pool), "clusters": len(clusters), "validation_set": len(reps)}


def stage_validate(run: Run) -> dict:
    cfg = run.config
    cands = read_pool(run.path("validation_set.jsonl"))
    cache = BaselineCache(run.path("baselines.jsonl"))
    backend = run.backend()
    baselines_for(run.problem, run.train + run.test, cache, cfg.baseline_timeout, backend)
    store = RecordStore(run.path("records.jsonl"))
    p1 = validate_phase_train(run.problem, cands, run.train, cache, store, backend, cfg.workers, cfg.seed)
    p2 = validate_phase_test(run.problem, p1.survivors, run.test, cache, store, backend, cfg.workers, cfg.seed)
    store.write_table(run.path("records.csv"))
    _dump(run.path("validation.json"), {"train_scores": p1.scores,
                                        "survivors": [c.id for c in p1.survivors]})
    return {"candidates": len(cands), "survivors": len(p1.survivors), "solves": p1.solves + p2.solves}


def _test_setup(run: Run):
    cache = BaselineCache(run.path("baselines.jsonl"))
    baselines = {i: cache.get(run.name, i).elapsed for i in run.test}
    store = RecordStore(run.path("records.jsonl"))
    val = _load(run.path("validation.json"))
    survivors = set(val["survivors"])
    cands = [c for c in read_pool(run.path("validation_set.jsonl")) if c.id in survivors]
    test_records = [r for r in store.records("test") if r.candidate_id in survivors]
    return cache, baselines, cands, test_records, val["train_scores"]


def stage_race(run: Run) -> dict:
    cfg = run.config
    _, baselines, cands, records, scores = _test_setup(run)
    by_inst = records_by_instance(records)
    scored = scored_from(cands, scores)
    out = {"baselines": baselines}
    if not scored:
        out.update({"family_budget": None, "simple_top_k": None, "best_single": None, "sweep": []})
        _dump(run.path("portfolio.json"), out)
        return {"wall_clock": 0.0, "candidates": 0}

    def race(plan):
        rows = race_all(plan, by_inst, baselines, cfg.reallocate)
        wall, cpu = portfolio_savings(rows)
        return {"plan": plan.to_dict(), "wall_clock": wall, "cpu_adjusted": cpu,
                "rows": [{"instance": r.instance, "winner": r.winner, "t_winner": r.t_winner,
                          "baseline": r.baseline, "contributions": r.contributions} for r in rows]}

    out["family_budget"] = race(select_family_budget(scored, cfg.k, cfg.m))
    out["simple_top_k"] = race(select_simple_top_k(scored, cfg.k))
    bs = best_single(candidate_metrics(records))
    out["best_single"] = race(best_single_plan(bs)) if bs else None
    ms = [ALL if m == "all" else m for m in cfg.sweep_m]
    out["sweep"] = sweep_table(sweep_km(scored, by_inst, baselines, cfg.sweep_k, ms, cfg.reallocate))
    _dump(run.path("portfolio.json"), out)
    return {"wall_clock": out["family_budget"]["wall_clock"], "candidates": len(scored)}


def heatmap(records, baselines: dict) -> dict:
    """Rows: candidates by SAT count (desc); columns: instances by baseline time.

    A cell is log10 speedup, "UNSAT", or "TIMEOUT" (timeouts, errors and
    missing records alike).
    """
    cols = sorted(baselines, key=lambda i: (baselines[i], i))
    by_cand: dict[str, dict] = {}
    for r in records:
        by_cand.setdefault(r.candidate_id, {})[r.instance_id] = r
    rows = sorted(by_cand, key=lambda c: (-sum(1 for r in by_cand[c].values() if r.status == SAT), c))
    cells = []
    for cid in rows:
        line = []
        for iid in cols:
            rec = by_cand[cid].get(iid)
            sp = per_instance_speedup(rec) if rec is not None else None
            if sp is not None:
                line.append(math.log10(sp))
            elif rec is not None and rec.status == UNSAT:
                line.append(UNSAT)
            else:
                line.append(TIMEOUT)
        cells.append(line)
    return {"rows": rows, "columns": cols, "baseline": [baselines[i] for i in cols], "cells": cells}


def stage_report(run: Run) -> dict:
    rep = run.path("report")
    cache, baselines, cands, records, scores = _test_setup(run)
    portfolio = _load(run.path("portfolio.json"))
    store = RecordStore(run.path("records.jsonl"))
    portfolios = {k: ({"wall_clock": v["wall_clock"], "cpu_adjusted": v["cpu_adjusted"]} if v else None)
                  for k, v in portfolio.items() if k in ("family_budget", "simple_top_k", "best_single")}
    metrics = metrics_report(records, baselines, portfolios)
    _dump(rep / "metrics.json", metrics.to_dict())
    desc = {c.id: c for c in read_pool(run.path("validation_set.jsonl"))}
    with (rep / "candidates.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", "descriptor", "method", "role", "train_score", "sat", "unsat",
                    "timeout", "error", "geomean", "retained", "max_speedup", "constraint"])
        for cid, m in metrics.candidates.items():
            c = desc[cid]
            w.writerow([cid, c.descriptor, c.method, c.role, scores.get(cid, 0.0), m["sat"], m["unsat"],
                        m["timeout"], m["error"], m["geomean"], m["retained"], m["max"], c.text])
    with (rep / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "m", "wall_clock", "cpu_adjusted", "lanes"])
        for row in portfolio["sweep"]:
            w.writerow([row["k"], row["m"], row["wall_clock"], row["cpu_adjusted"], row["lanes"]])
    hm = heatmap(records, baselines)
    _dump(rep / "heatmap.json", hm)
    with (rep / "heatmap.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id"] + hm["columns"])
        for cid, line in zip(hm["rows"], hm["cells"]):
            w.writerow([cid] + [v if isinstance(v, str) else repr(v) for v in line])
    store.write_table(rep / "records.csv")
    grids = 0
    for iid in run.corpus_ids:
        for r in sorted(_filters(run, iid), key=lambda r: (-r.variance, r.ref))[:run.config.cnn.retain]:
            path = rep / "activations" / iid / (r.ref.replace("/", "_") + ".txt")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(grid_to_text(r.mean_map, kind=f"activation {r.ref}"))
            grids += 1
    return {"candidates": len(metrics.candidates), "pool_ceiling": metrics.pool_ceiling,
            "activation_grids": grids}


STAGE_FUNCS = {
    "enumerate": stage_enumerate, "encode": stage_encode, "props": stage_props, "train": stage_train,
    "correlate": stage_correlate, "synth": stage_synth, "pool": stage_pool, "validate": stage_validate,
    "race": stage_race, "report": stage_report,
}


def run_stage(stage: str, config: RunConfig, force: bool = False) -> dict:
    """Run one stage; returns its manifest. A matching manifest makes this a no-op."""
    if stage not in STAGE_FUNCS:
        raise StageError(f"unknown stage '{stage}' (stages: {', '.join(STAGES)})")
    run = Run(config, Path(config.out))
    run.dir.mkdir(parents=True, exist_ok=True)
    config.write(run.path("config.json"))
    idx = STAGES.index(stage)
    if idx > 0:
        prev = STAGES[idx - 1]
        if not run.manifest(prev).exists():
            raise StageError(f"stage '{stage}' needs the artifacts of '{prev}'; run --stage {prev} first")
    path = run.manifest(stage)
    if path.exists() and not force:
        done = _load(path)
        if done.get("config") == config.digest():
            log.info("stage %s already complete, skipping", stage)
            return dict(done, skipped=True)
    outputs = STAGE_FUNCS[stage](run)
    manifest = {"stage": stage, "config": config.digest(), "outputs": outputs}
    _dump(path, manifest)
    return dict(manifest, skipped=False)


def run_pipeline(config: RunConfig, until: str = "report") -> dict:
    results = {}
    for stage in STAGES[:STAGES.index(until) + 1]:
        results[stage] = run_stage(stage, config)
    return results
