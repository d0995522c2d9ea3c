"""Experiment harness shared by the sweep scripts and the acceptance suite."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coverage import cov, tgt
from .fixtures import Fixture, rot_z
from .merge import boxes_from_partition, merge_all
from .mcts import MctsConfig, run_mcts, score
from .obb import Obb
from .oversegment import compute_masks, oversegment
from .refine import BoxSet, default_unit, postprocess, refine_hard, refine_soft

logger = logging.getLogger(__name__)


def misrotated_leg_start(fx: Fixture, seed: int, angle: float = 15.0, legs: int = 1) -> BoxSet:
    """Ground-truth boxes with ``legs`` leg boxes yawed by +-``angle`` and their feet cut off.

    Each chosen leg box is fit in the yawed frame to the leg vertices above a
    random cut height, so it is both misrotated and short. Single face steps
    cannot fix the rotation, and a refit only sees the samples the box already
    covers. With ``legs=1`` the draws match the single-leg start exactly.
    """
    rng = np.random.default_rng(seed)
    n_legs = len(fx.spec.parts) - 1
    first = 1 + int(rng.integers(n_legs))
    chosen = [1 + (first - 1 + j) % n_legs for j in range(legs)]
    m = fx.mesh
    boxes = list(fx.gt_boxes)
    for k in chosen:
        sgn = float(rng.choice([-1.0, 1.0]))
        cut = float(rng.choice([0.2, 0.4]))
        R = rot_z(sgn * angle) @ fx.spec.parts[k].R
        verts = m.vertices[np.unique(m.tets[fx.labels.segment_tets[k]])]
        q = verts[verts[:, 2] >= cut - 1e-9] @ R
        boxes[k] = Obb(R, q.min(axis=0), q.max(axis=0))
    return BoxSet(boxes, default_unit(m))


def split_partition(fx: Fixture, mode: str):
    presegs = fx.presegs[mode]
    return oversegment(fx.mesh, compute_masks(fx.mesh, presegs))


def epsilon_sweep(fx: Fixture, mode: str, epsilons) -> dict:
    """Final box count of the merge-only pipeline per merge threshold."""
    part = split_partition(fx, mode)
    out = {}
    for eps in epsilons:
        merged = merge_all(fx.mesh, part, eps)
        final = postprocess(fx.mesh, boxes_from_partition(fx.mesh, merged))
        out[eps] = {"merged_segments": merged.n_segments, "n_box": len(final.live),
                    "tgt": tgt(fx.mesh, final.boxes), "cov": cov(fx.mesh, final.boxes)}
    return out


def alpha_sweep(fx: Fixture, mode: str, alphas, epsilon: float = -0.02) -> dict:
    """Tgt and Cov after refinement, before and after postprocess, per alpha (inf = hard)."""
    part = merge_all(fx.mesh, split_partition(fx, mode), epsilon)
    start = boxes_from_partition(fx.mesh, part)
    out = {}
    for a in alphas:
        refined = refine_hard(fx.mesh, start) if math.isinf(a) else refine_soft(fx.mesh, start, a)
        final = postprocess(fx.mesh, refined)
        out[a] = {"tgt_pre": tgt(fx.mesh, refined.boxes), "cov_pre": cov(fx.mesh, refined.boxes),
                  "tgt": tgt(fx.mesh, final.boxes), "cov": cov(fx.mesh, final.boxes),
                  "n_box": len(final.live)}
    return out


@dataclass
class AblationRun:
    seed: int
    greedy: float
    best: float
    seconds: float
    log: list = field(default_factory=list)  # (iteration, best_score, elapsed)

    def time_to_reach(self, target: float, tol: float = 1e-12) -> float:
        return next((t for _, b, t in self.log if b >= target - tol), math.inf)


def mcts_ablation(fx: Fixture, seeds, iterations: int = 200, horizon: int = 16, legs: int = 1,
                  **flags) -> list:
    """MCTS against soft refinement from the misrotated-leg start, one run per seed."""
    runs = []
    for seed in seeds:
        start = misrotated_leg_start(fx, seed, legs=legs)
        g = score(fx.mesh, start.boxes, refine_soft(fx.mesh, start).boxes)
        t = time.perf_counter()
        res = run_mcts(fx.mesh, start, MctsConfig(iterations=iterations, horizon=horizon, seed=seed, **flags))
        runs.append(AblationRun(seed, g, res.score, time.perf_counter() - t, res.log))
        logger.info("seed %d greedy %.5f mcts %.5f (%.1fs)", seed, g, res.score, runs[-1].seconds)
    return runs
