"""Command line entry point: ``streamwork --stage <name> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from .config import STAGES, load_config
from .stages import StageError, run_pipeline, run_stage


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamwork", description="Streamliner synthesis pipeline.")
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--stage", default="all", choices=("all",) + STAGES,
                   help="stage to run; 'all' runs every stage in order")
    p.add_argument("--problem", help="builtin problem name or path to a problem file")
    p.add_argument("--llm", choices=("live", "replay", "stub"), help="LLM backend")
    p.add_argument("--solver", choices=("builtin", "external"), help="solver backend")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out", help="run directory")
    p.add_argument("--force", action="store_true", help="re-run a stage even if complete")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, problem=args.problem, solver=args.solver, seed=args.seed,
                          out=args.out)
        if args.llm:
            cfg = cfg.model_copy(update={"llm": cfg.llm.model_copy(update={"backend": args.llm})})
    except (ValidationError, OSError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        if args.stage == "all":
            results = run_pipeline(cfg)
        else:
            results = {args.stage: run_stage(args.stage, cfg, force=args.force)}
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for stage, manifest in results.items():
        state = "skipped" if manifest.get("skipped") else "done"
        print(f"{stage}: {state} {json.dumps(manifest.get('outputs'), default=str)[:200]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
