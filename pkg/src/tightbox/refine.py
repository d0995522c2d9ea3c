"""Discrete box refinement: 13 actions per box, greedy hard/soft descent and
coverage-restoring post-processing.

Each live box has 12 face steps (add or subtract ``unit`` to one of
lx, ly, lz, rx, ry, rz in the box frame) and one rotation refit. Candidate
actions are scored incrementally against a :class:`CoverageCache`, touching
only samples near the box.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .coverage import DEFAULT_ALPHA, CoverageCache, CoverageSamples, samples_for
from .errors import EmptyPointSet, InapplicableAction, InfeasibleStart
from .obb import Obb, boxes_to_json, contain_eps, fit_min_obb
from .tetmesh import TetMesh, connected_components

logger = logging.getLogger(__name__)

N_ACTIONS = 13
REFIT = 12
COORD_NAMES = ("lx", "ly", "lz", "rx", "ry", "rz")
STRICT_TOL = 1e-12
TIE_TOL = 1e-12
DEFAULT_UNIT_DIVISIONS = 64
BISECT_ITERS = 8


@dataclass
class BoxSet:
    boxes: list
    unit: float

    def __post_init__(self):
        if not self.unit > 0:
            raise ValueError("unit must be positive")
        self.boxes = list(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i):
        return self.boxes[i]

    @property
    def live(self) -> list:
        return [i for i, b in enumerate(self.boxes) if not b.deleted]

    def copy(self) -> "BoxSet":
        return BoxSet(list(self.boxes), self.unit)

    def to_json(self) -> str:
        return boxes_to_json(self.boxes, unit=self.unit)


def default_unit(mesh: TetMesh) -> float:
    return mesh.diagonal / DEFAULT_UNIT_DIVISIONS


class Action(NamedTuple):
    box_index: int
    kind: int  # 0..11 face steps, 12 refit

    @property
    def is_refit(self) -> bool:
        return self.kind == REFIT

    @property
    def coord(self) -> int:
        return self.kind // 2

    @property
    def sign(self) -> int:
        return 1 if self.kind % 2 == 0 else -1

    def inverse(self):
        if self.is_refit:
            return None
        return Action(self.box_index, self.kind ^ 1)

    def __str__(self):
        if self.is_refit:
            return f"{self.box_index}:refit"
        return f"{self.box_index}:{COORD_NAMES[self.coord]}{'+' if self.sign > 0 else '-'}"


def box_actions(i: int) -> list:
    return [Action(i, k) for k in range(N_ACTIONS)]


def enumerate_actions(state) -> list:
    """All 13 actions of every live box, in (box_index, kind) order."""
    out = []
    for i, b in enumerate(state):
        if not b.deleted:
            out.extend(box_actions(i))
    return out


class Outcome(NamedTuple):
    action: Action
    box: Obb
    d_volume: float
    d_uncovered: float
    dn_uncovered: int  # change in uncovered sample count
    idx: np.ndarray  # sample indices whose membership is given by mask
    mask: np.ndarray


class SearchState:
    """Mutable (boxes, cache) pair used by the greedy and tree searches."""

    def __init__(self, samples: CoverageSamples, boxes, unit: float, cache: CoverageCache | None = None):
        self.samples = samples
        self.boxes = list(boxes)
        self.unit = float(unit)
        self.cache = cache if cache is not None else CoverageCache(samples, self.boxes)
        self.volume_sum = float(sum(b.volume for b in self.boxes))

    @classmethod
    def from_boxset(cls, mesh: TetMesh, state: BoxSet, subdivide: bool = False) -> "SearchState":
        return cls(samples_for(mesh, subdivide), state.boxes, state.unit)

    def copy(self) -> "SearchState":
        new = object.__new__(SearchState)
        new.samples = self.samples
        new.boxes = list(self.boxes)
        new.unit = self.unit
        new.cache = self.cache.copy()
        new.volume_sum = self.volume_sum
        return new

    def boxset(self) -> BoxSet:
        return BoxSet(list(self.boxes), self.unit)

    @property
    def tgt(self) -> float:
        return self.volume_sum / self.samples.total

    @property
    def cov(self) -> float:
        return self.cache.coverage

    def objective(self, alpha: float) -> float:
        return self.tgt - alpha * self.cov

    def actions(self) -> list:
        return enumerate_actions(self.boxes)

    def live(self) -> list:
        return [i for i, b in enumerate(self.boxes) if not b.deleted]

    def commit(self, out: Outcome) -> np.ndarray:
        """Apply an evaluated outcome; returns sample indices whose count changed."""
        i = out.action.box_index
        mask = self.cache.member[i].copy()
        if out.box.deleted:
            mask[:] = False
        else:
            mask[out.idx] = out.mask
        old = self.boxes[i]
        self.boxes[i] = out.box
        self.volume_sum += out.box.volume - old.volume
        self.volume_sum = float(sum(b.volume for b in self.boxes))
        return self.cache.set_member(i, mask)

    def append_box(self, box: Obb) -> int:
        self.boxes.append(box)
        self.volume_sum = float(sum(b.volume for b in self.boxes))
        return self.cache.append(box)


class ActionEvaluator:
    """Scores candidate actions against a state's coverage cache.

    Refit results are memoized on the membership mask of the box, since a
    refit depends only on the samples it covers.
    """

    def __init__(self, memo_size: int = 4096):
        self._refit_memo = OrderedDict()
        self._memo_size = memo_size
        self.refit_fits = 0

    def refit_box(self, state: SearchState, i: int):
        mask = state.cache.member[i]
        key = (id(state.samples), mask.tobytes())
        hit = self._refit_memo.get(key)
        if hit is not None:
            self._refit_memo.move_to_end(key)
            return hit
        pts = state.samples.points[mask]
        if len(pts) == 0:
            raise InapplicableAction(f"box {i} covers no samples; refit is inapplicable")
        box = fit_min_obb(pts)
        new_mask = box.contains(state.samples.points)
        self.refit_fits += 1
        self._refit_memo[key] = (box, new_mask)
        if len(self._refit_memo) > self._memo_size:
            self._refit_memo.popitem(last=False)
        return box, new_mask

    def _outcome(self, state, action, box, idx, new_mask):
        i = action.box_index
        cache = state.cache
        old_mask = cache.member[i][idx]
        cnt = cache.cover_count[idx]
        lost = old_mask & ~new_mask
        gained = new_mask & ~old_mask
        w = state.samples.weights[idx]
        lost_u = lost & (cnt == 1)
        gain_u = gained & (cnt == 0)
        d_unc = float(w[lost_u].sum()) - float(w[gain_u].sum())
        dn = int(lost_u.sum()) - int(gain_u.sum())
        return Outcome(action, box, box.volume - state.boxes[i].volume, d_unc, dn, idx, new_mask)

    def evaluate_box(self, state: SearchState, i: int) -> list:
        """Outcomes of all applicable actions of live box ``i``."""
        return self.evaluate_box_region(state, i)[0]

    def evaluate_box_region(self, state: SearchState, i: int):
        """Outcomes of box ``i`` plus the sample indices they depend on.

        The outcomes stay valid while box ``i`` and the cover counts on those
        samples are unchanged.
        """
        b = state.boxes[i]
        unit = state.unit
        pts = state.samples.points
        q = b.local(pts)
        pad = unit * 1.001 + b.eps * 4
        near = np.nonzero(np.all((q >= b.lo - pad) & (q <= b.hi + pad), axis=1))[0]
        qn = q[near]
        # all 12 face steps at once: row k moves coordinate k // 2 by +-unit
        lo = np.repeat(b.lo[None], 12, axis=0)
        hi = np.repeat(b.hi[None], 12, axis=0)
        rows = np.arange(12)
        step = np.where(rows % 2 == 0, unit, -unit)
        coord = rows // 2
        low = coord < 3
        lo[rows[low], coord[low]] += step[low]
        hi[rows[~low], coord[~low] - 3] += step[~low]
        ext = hi - lo
        dead = np.any(ext < 0, axis=1)
        e = contain_eps(ext[:, 0], ext[:, 1], ext[:, 2])[:, None, None]
        masks = np.all((qn[None] >= lo[:, None] - e) & (qn[None] <= hi[:, None] + e), axis=2)
        masks[dead] = False
        cache = state.cache
        old = cache.member[i][near]
        cnt = cache.cover_count[near]
        w = state.samples.weights[near]
        lost_u = old & (cnt == 1) & ~masks
        gain_u = ~old & (cnt == 0) & masks
        d_unc = (lost_u * w).sum(axis=1) - (gain_u * w).sum(axis=1)
        dn = lost_u.sum(axis=1) - gain_u.sum(axis=1)
        outs = []
        for kind in range(12):
            nb = Obb(b.rotation, lo[kind], hi[kind])
            outs.append(Outcome(Action(i, kind), nb, nb.volume - b.volume, float(d_unc[kind]),
                                int(dn[kind]), near, masks[kind]))
        try:
            rb, rmask = self.refit_box(state, i)
        except InapplicableAction:
            return outs, near
        outs.append(self._outcome(state, Action(i, REFIT), rb, np.arange(len(pts)), rmask))
        moved = np.nonzero(rmask != cache.member[i])[0]
        return outs, np.union1d(near, moved)

    def evaluate(self, state: SearchState, action: Action) -> Outcome:
        if action.is_refit:
            rb, rmask = self.refit_box(state, action.box_index)
            return self._outcome(state, action, rb, np.arange(len(state.samples)), rmask)
        i = action.box_index
        b = state.boxes[i]
        if b.deleted:
            raise InapplicableAction(f"box {i} is deleted")
        nb = b.face_step(action.coord, action.sign * state.unit)
        if nb.deleted:
            idx = np.nonzero(state.cache.member[i])[0]
            return self._outcome(state, action, nb, idx, np.zeros(len(idx), dtype=bool))
        return self._outcome(state, action, nb, np.arange(len(state.samples)), nb.contains(state.samples.points))


class OutcomeCache:
    """Per-box outcome lists reused across steps of one descent on one state.

    After a commit only boxes whose dependency region saw a cover-count
    change (or the committed box itself) are re-evaluated. ``entries`` seeds
    the cache with a ``snapshot()`` taken on a state equal to ``state``.
    """

    def __init__(self, state: SearchState, evaluator: ActionEvaluator, entries: dict | None = None):
        self.state = state
        self.evaluator = evaluator
        self._entries = dict(entries) if entries else {}

    def snapshot(self) -> dict:
        return dict(self._entries)

    def fill(self) -> None:
        for i in self.state.live():
            self.outcomes(i)

    def outcomes(self, i: int) -> list:
        box = self.state.boxes[i]
        hit = self._entries.get(i)
        if hit is not None and hit[0] is box:
            return hit[1]
        outs, region = self.evaluator.evaluate_box_region(self.state, i)
        self._entries[i] = (box, outs, region)
        return outs

    def commit(self, out: Outcome) -> None:
        changed = self.state.commit(out)
        self._entries.pop(out.action.box_index, None)
        if changed.size == 0:
            return
        touched = np.zeros(len(self.state.samples), dtype=bool)
        touched[changed] = True
        for j in [j for j, (_, _, region) in self._entries.items() if touched[region].any()]:
            del self._entries[j]


def soft_value(state: SearchState, out: Outcome, alpha: float) -> float:
    total = state.samples.total
    unc = 0.0 if state.cache.n_uncovered + out.dn_uncovered == 0 else state.cache.uncovered_volume + out.d_uncovered
    return (state.volume_sum + out.d_volume) / total - alpha * (1.0 - unc / total)


def hard_value(state: SearchState, out: Outcome) -> float:
    return (state.volume_sum + out.d_volume) / state.samples.total


def pick_min(values, tol: float = TIE_TOL):
    """Index of the minimum, lowest index among values within ``tol`` of it."""
    values = np.asarray(values, dtype=float)
    m = values.min()
    return int(np.nonzero(values <= m + tol)[0][0])


def greedy_soft_step(state: SearchState, evaluator: ActionEvaluator, alpha: float, boxes=None,
                     cache: OutcomeCache | None = None):
    """Best soft-objective outcome over the given boxes (default all live)."""
    outs = []
    for i in (state.live() if boxes is None else boxes):
        outs.extend(cache.outcomes(i) if cache is not None else evaluator.evaluate_box(state, i))
    if not outs:
        return None, None
    vals = [soft_value(state, o, alpha) for o in outs]
    k = pick_min(vals)
    return outs[k], vals[k]


def _trace_row(step, action, state, alpha):
    return {"step": step, "action": str(action), "box": action.box_index, "kind": action.kind,
            "objective": state.objective(alpha), "tgt": state.tgt, "cov": state.cov}


def refine_soft(mesh: TetMesh, state: BoxSet, alpha: float = DEFAULT_ALPHA, trace: list | None = None,
                max_steps: int | None = None, subdivide: bool = False) -> BoxSet:
    """Greedy descent on ``Tgt - alpha * Cov`` until no action strictly improves."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    s = SearchState.from_boxset(mesh, state, subdivide)
    soft_descent(s, alpha, trace=trace, max_steps=max_steps)
    return s.boxset()


def soft_descent(s: SearchState, alpha: float, evaluator: ActionEvaluator | None = None,
                 trace: list | None = None, max_steps: int | None = None) -> int:
    evaluator = evaluator or ActionEvaluator()
    oc = OutcomeCache(s, evaluator)
    steps = 0
    current = s.objective(alpha)
    while max_steps is None or steps < max_steps:
        out, val = greedy_soft_step(s, evaluator, alpha, cache=oc)
        if out is None or not val < current - STRICT_TOL:
            break
        oc.commit(out)
        steps += 1
        current = s.objective(alpha)
        if trace is not None:
            trace.append(_trace_row(steps, out.action, s, alpha))
    return steps


def refine_hard(mesh: TetMesh, state: BoxSet, trace: list | None = None, max_steps: int | None = None,
                subdivide: bool = False) -> BoxSet:
    """Greedy Tgt descent restricted to actions that keep Cov = 1."""
    s = SearchState.from_boxset(mesh, state, subdivide)
    if s.cache.n_uncovered:
        raise InfeasibleStart(f"start state has coverage {s.cov:.6f} < 1")
    oc = OutcomeCache(s, ActionEvaluator())
    steps = 0
    while max_steps is None or steps < max_steps:
        # the start is fully covered, so feasible outcomes uncover nothing
        outs = [o for i in s.live() for o in oc.outcomes(i) if o.dn_uncovered == 0]
        if not outs:
            break
        vals = [hard_value(s, o) for o in outs]
        k = pick_min(vals)
        if not vals[k] < s.tgt - STRICT_TOL:
            break
        oc.commit(outs[k])
        steps += 1
        if trace is not None:
            trace.append(_trace_row(steps, outs[k].action, s, np.inf) | {"objective": s.tgt})
    return s.boxset()


def apply_action(mesh: TetMesh, state: BoxSet, cache: CoverageCache, a: Action, subdivide: bool = False):
    """Functional single-step application returning a new (BoxSet, cache)."""
    s = SearchState(cache.samples, state.boxes, state.unit, cache.copy())
    if s.boxes[a.box_index].deleted:
        raise InapplicableAction(f"box {a.box_index} is deleted")
    out = ActionEvaluator().evaluate(s, a)
    s.commit(out)
    return s.boxset(), s.cache


# ---------------------------------------------------------------------------
# post-processing


def _cover_leftovers(mesh: TetMesh, s: SearchState) -> int:
    holes = np.unique(s.samples.owner[s.cache.cover_count == 0])
    added = 0
    for comp in connected_components(mesh, holes):
        verts = mesh.vertices[np.unique(mesh.tets[comp])]
        s.append_box(fit_min_obb(verts))
        added += 1
    return added


def _shrink_faces(s: SearchState, i: int) -> None:
    unit = s.unit
    for coord in range(6):
        b = s.boxes[i]
        axis = coord % 3
        direction = 1.0 if coord < 3 else -1.0  # inward
        q = b.local(s.samples.points)
        near = np.nonzero(s.cache.member[i])[0]
        qn = q[near]
        unique = s.cache.cover_count[near] == 1

        def keeps(offset):
            nb = b.face_step(coord, direction * offset)
            e = nb.eps
            inside = np.all((qn >= nb.lo - e) & (qn <= nb.hi + e), axis=1)
            return not np.any(unique & ~inside)

        lo_off, hi_off = 0.0, min(unit, float(b.hi[axis] - b.lo[axis]))
        if hi_off <= 0:
            continue
        for _ in range(BISECT_ITERS):
            mid = (lo_off + hi_off) / 2
            if keeps(mid):
                lo_off = mid
            else:
                hi_off = mid
        if lo_off > 0:
            nb = b.face_step(coord, direction * lo_off)
            e = nb.eps
            mask = np.all((qn >= nb.lo - e) & (qn <= nb.hi + e), axis=1)
            s.commit(Outcome(Action(i, 2 * coord + (coord >= 3)), nb, nb.volume - b.volume, 0.0,
                             0, near, mask))


def postprocess(mesh: TetMesh, state: BoxSet, subdivide: bool = False, stats: dict | None = None) -> BoxSet:
    """Restore full coverage and trim sub-unit slack from every face.

    Uncovered tets are grouped into face-connected components and each gets a
    fresh box. Then each face of each live box is moved inward by the largest
    offset below ``unit`` (found by bisection) that leaves coverage unchanged.
    """
    s = SearchState.from_boxset(mesh, state, subdivide)
    added = _cover_leftovers(mesh, s)
    for i in s.live():
        _shrink_faces(s, i)
    assert s.cache.n_uncovered == 0
    if stats is not None:
        stats["added_boxes"] = added
    return s.boxset()
