"""Command line entry point: ``tightbox run | batch | generate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import PresegNotFound
from .fixtures import CATALOG, MODES, generate, write_fixture
from .pipeline import STAGES, PipelineConfig, PipelineError, load_config, run_batch, run_pipeline

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_PRESEG = 2


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON config; flags override it")
    p.add_argument("--input", help="mesh (.json/.node) for run, shape directory root for batch")
    p.add_argument("--presegs", help="pre-segment JSON")
    p.add_argument("--labels", help="instance labels JSON for mAP")
    p.add_argument("--stages", choices=STAGES)
    p.add_argument("--epsilon-merge", type=float, dest="epsilon_merge")
    p.add_argument("--alpha", type=float, help="soft coverage weight; 'inf' selects hard refinement")
    p.add_argument("--c", type=float, help="UCB exploration constant")
    p.add_argument("--unit", type=float, help="face step size (default: mesh diagonal / 64)")
    p.add_argument("--mcts-iters", type=int, dest="mcts_iters")
    p.add_argument("--mcts-horizon", type=int, dest="mcts_horizon")
    p.add_argument("--no-ee", action="store_false", dest="ee", default=None)
    p.add_argument("--pns", action="store_true", default=None)
    p.add_argument("--no-prune", action="store_false", dest="prune", default=None)
    p.add_argument("--grid", type=int, help="metric grid resolution per axis")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--jobs", type=int, help="batch worker count (default: CPU count)")


_KEYS = ("input", "presegs", "labels", "stages", "epsilon_merge", "alpha", "c", "unit", "mcts_iters",
         "mcts_horizon", "ee", "pns", "prune", "grid", "seed", "out_dir", "jobs")


def build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(**{k: getattr(args, k) for k in _KEYS}).validate()


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tightbox", description="Tight oriented box decomposition of tet meshes")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_pipeline_flags(sub.add_parser("run", help="run the pipeline on one mesh"))
    _add_pipeline_flags(sub.add_parser("batch", help="run every shape directory under --input"))
    g = sub.add_parser("generate", help="write the synthetic fixture catalog")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--names", nargs="*", choices=sorted(CATALOG), help="fixtures (default: all)")
    g.add_argument("--mode", choices=MODES, default="clean", help="pre-segment corruption mode")
    g.add_argument("--tets-per-unit", type=float, dest="tpu")
    g.add_argument("--node-ele", action="store_true", help="write TetGen .node/.ele instead of JSON")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        from pathlib import Path
        for name in args.names or CATALOG:
            spec = CATALOG[name]() if args.tpu is None else CATALOG[name](args.tpu)
            write_fixture(generate(spec), Path(args.out_dir) / name, args.mode, args.node_ele)
        return EXIT_OK
    try:
        cfg = build_config(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": "InvalidConfig", "message": str(exc)}), file=sys.stderr)
        return EXIT_FAILED
    if args.command == "batch":
        agg = run_batch(cfg.input, cfg)
        print(json.dumps({"n_shapes": agg["n_shapes"], "n_ok": agg["n_ok"], "means": agg["means"],
                          "failures": agg["failures"]}, indent=1))
        return EXIT_OK
    try:
        metrics = run_pipeline(cfg)
    except PipelineError as exc:
        print(json.dumps({"error": type(exc.cause).__name__, "failed_stage": exc.stage,
                          "message": str(exc.cause)}), file=sys.stderr)
        return EXIT_PRESEG if isinstance(exc.cause, PresegNotFound) else EXIT_FAILED
    print(json.dumps(metrics, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
