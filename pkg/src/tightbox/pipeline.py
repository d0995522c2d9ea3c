"""End-to-end pipeline: split, merge, refine, tree search, post-process.

Stages are cumulative: ``merge`` runs split + merge, ``refine`` adds greedy
refinement and ``mcts`` adds tree search on top of the refined boxes. Every
run finishes with post-processing, so the written boxes cover every tet
centroid.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .coverage import DEFAULT_ALPHA
from .errors import TightBoxError
from .mcts import DEFAULT_C, MctsConfig, run_mcts
from .merge import DEFAULT_EPSILON, boxes_from_partition, merge_all
from .metrics import DEFAULT_GRID, report
from .obb import boxes_to_obj
from .oversegment import compute_masks, load_presegs, oversegment
from .refine import BoxSet, default_unit, postprocess, refine_hard, refine_soft
from .tetmesh import Partition, load_tetmesh

logger = logging.getLogger(__name__)

STAGES = ("merge", "refine", "mcts")
MESH_NAMES = ("mesh.json", "mesh.node", "mesh.ele")


class PipelineError(TightBoxError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    input: str = ""
    presegs: str | None = None
    labels: str | None = None
    out_dir: str = "out"
    stages: str = "refine"
    epsilon_merge: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA  # math.inf selects hard refinement
    c: float = DEFAULT_C
    unit: float | None = None
    mcts_iters: int = 500
    mcts_horizon: int = 16
    ee: bool = True
    pns: bool = False
    prune: bool = True
    grid: int = DEFAULT_GRID
    seed: int = 0
    jobs: int | None = None

    def validate(self) -> "PipelineConfig":
        if self.stages not in STAGES:
            raise ValueError(f"stages must be one of {STAGES}")
        if not -1.0 <= self.epsilon_merge <= 1.0:
            raise ValueError("epsilon_merge must lie in [-1, 1]")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0 (inf for hard refinement)")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if self.unit is not None and not self.unit > 0:
            raise ValueError("unit must be positive")
        if self.mcts_iters < 1 or self.mcts_horizon < 1:
            raise ValueError("mcts iterations and horizon must be >= 1")
        if not 4 <= self.grid <= 1024:
            raise ValueError("grid must lie in [4, 1024]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.jobs is not None and self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self

    def with_overrides(self, **kw) -> "PipelineConfig":
        known = {f.name for f in fields(self)}
        data = asdict(self)
        for k, v in kw.items():
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            if v is not None:
                data[k] = v
        return PipelineConfig(**data)

    @property
    def hard(self) -> bool:
        return math.isinf(self.alpha)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    if isinstance(data.get("alpha"), str):
        data["alpha"] = float(data["alpha"])
    return PipelineConfig().with_overrides(**data)


def _stage_list(stages: str) -> list:
    return ["split"] + list(STAGES[:STAGES.index(stages) + 1]) + ["postprocess"]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _load_labels(path) -> np.ndarray | None:
    if path is None or not Path(path).exists():
        return None
    return np.asarray(json.loads(Path(path).read_text())["labels"])


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run enabled stages and write boxes, metrics and traces to ``cfg.out_dir``."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = []
    state: BoxSet | None = None
    stage = "load"
    t0 = time.perf_counter()
    timings = {}
    try:
        mesh = load_tetmesh(cfg.input)
        presegs = load_presegs(cfg.presegs) if cfg.presegs else []
        labels = _load_labels(cfg.labels)
        unit = cfg.unit if cfg.unit is not None else default_unit(mesh)
        for stage in _stage_list(cfg.stages):
            ts = time.perf_counter()
            if stage == "split":
                masks = compute_masks(mesh, presegs) if presegs else np.zeros((mesh.n_tets, 0), dtype=bool)
                part = oversegment(mesh, masks)
                trace.append({"stage": "split", "segments": part.n_segments})
            elif stage == "merge":
                rows = []
                part = merge_all(mesh, part, cfg.epsilon_merge, trace=rows)
                trace += [{"stage": "merge", **r} for r in rows]
                state = boxes_from_partition(mesh, part, unit)
            elif stage == "refine":
                rows = []
                state = refine_hard(mesh, state, trace=rows) if cfg.hard else \
                    refine_soft(mesh, state, cfg.alpha, trace=rows)
                trace += [{"stage": "refine", **r} for r in rows]
            elif stage == "mcts":
                alpha = DEFAULT_ALPHA if cfg.hard else cfg.alpha
                res = run_mcts(mesh, state, MctsConfig(
                    iterations=cfg.mcts_iters, horizon=cfg.mcts_horizon, c=cfg.c, alpha=alpha,
                    ee=cfg.ee, pns=cfg.pns, prune=cfg.prune, seed=cfg.seed))
                state = res.boxes
                res.write_log(out / "mcts_log.csv")
                trace.append({"stage": "mcts", "score": res.score, "actions": [str(a) for a in res.actions]})
            elif stage == "postprocess":
                stats = {}
                state = postprocess(mesh, state, stats=stats)
                trace.append({"stage": "postprocess", **stats})
            timings[stage] = time.perf_counter() - ts
        stage = "report"
        metrics = report(mesh, state.boxes, labels, cfg.grid, cfg.seed)
    except Exception as exc:
        _flush_failure(out, stage, exc, state, trace)
        raise PipelineError(stage, exc) from exc
    metrics["wall_clock"] = time.perf_counter() - t0
    metrics["stage_seconds"] = timings
    (out / "boxes.json").write_text(state.to_json())
    (out / "boxes.obj").write_text(boxes_to_obj(state.boxes))
    _write_json(out / "metrics.json", metrics)
    _write_trace(out / "trace.jsonl", trace)
    return metrics


def _write_trace(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, default=_jsonable) + "\n")


def _flush_failure(out: Path, stage: str, exc: Exception, state, trace) -> None:
    err = {"failed_stage": stage, "error": type(exc).__name__, "message": str(exc)}
    logger.error("stage %s failed: %s", stage, exc)
    _write_json(out / "metrics.json", err)
    _write_trace(out / "trace.jsonl", trace + [err])
    if state is not None:
        (out / "boxes.json").write_text(json.dumps({**json.loads(state.to_json()), "failed_stage": stage},
                                                   indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# batch


def find_shapes(root) -> list:
    root = Path(root)
    out = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        mesh = next((d / n for n in MESH_NAMES if (d / n).exists()), None)
        if mesh is not None:
            out.append((d.name, d, mesh))
    return out


def _run_one(args):
    name, d, mesh, cfg = args
    pres = d / "presegs.json"
    shape_cfg = cfg.with_overrides(input=str(mesh), out_dir=str(Path(cfg.out_dir) / name),
                                   presegs=str(pres) if pres.exists() else None,
                                   labels=str(d / "labels.json"))
    t = time.perf_counter()
    try:
        m = run_pipeline(shape_cfg)
        return name, m, None, time.perf_counter() - t
    except Exception as exc:  # keep going past per-shape failures
        return name, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t


COLUMNS = ("n_box", "tgt", "cov", "tov", "mov", "cd", "viou", "map")


def run_batch(root, cfg: PipelineConfig) -> dict:
    """Run every shape directory under ``root``; writes ``aggregate.json``."""
    cfg.validate()
    shapes = find_shapes(root)
    jobs = cfg.jobs or os.cpu_count() or 1
    work = [(n, d, m, cfg) for n, d, m in shapes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    reports = {n: m for n, m, e, _ in results if e is None}
    failures = [{"shape": n, "error": e} for n, _, e, _ in results if e is not None]
    means = {}
    for col in COLUMNS:
        vals = [r[col] for r in reports.values() if r.get(col) is not None]
        means[col] = float(np.mean(vals)) if vals else None
    agg = {"n_shapes": len(shapes), "n_ok": len(reports), "means": means, "failures": failures,
           "seconds": {n: s for n, _, _, s in results}, "reports": reports}
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    _write_json(Path(cfg.out_dir) / "aggregate.json", agg)
    return agg
