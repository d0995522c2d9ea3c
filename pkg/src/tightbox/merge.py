"""Greedy agglomerative merging of segments by bounding-volume gain.

The gain of merging segments i and j is

    bavf(i, j) = (vol B_i + vol B_j - vol B_ij) / vol(S)

where B is the minimum oriented box of a segment's tet vertices. The pair
with the largest gain is merged while that gain is at least ``epsilon_merge``.
Pair scores are cached and only pairs touching the merged segment are
recomputed.

Pairs whose gain is provably below the threshold (because the convex hull of
their union is already too large) are never fitted and have no cache entry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidSegment
from .obb import fit_min_obb
from .refine import BoxSet, default_unit
from .tetmesh import Partition, TetMesh

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = -0.02
EPSILON_SWEEP = (0.0, -0.004, -0.02, -0.1)
HULL_REDUCE_ABOVE = 10_000


def segment_points(mesh: TetMesh, tets) -> np.ndarray:
    """Unique vertices of the given tets, reduced to hull vertices when large."""
    pts = mesh.vertices[np.unique(mesh.tets[np.asarray(tets)])]
    if len(pts) > HULL_REDUCE_ABOVE:
        try:
            pts = pts[np.sort(ConvexHull(pts).vertices)]
        except QhullError:
            pass
    return pts


def _hull_volume(pts) -> float:
    try:
        return float(ConvexHull(pts).volume)
    except (QhullError, ValueError):
        return 0.0


@dataclass
class MergeState:
    mesh: TetMesh
    seg_tets: dict  # live segment id -> tet indices
    epsilon_merge: float = DEFAULT_EPSILON
    seg_obb: dict = field(default_factory=dict)
    pair_scores: dict = field(default_factory=dict)  # (i, j), i < j -> bavf
    pruned: set = field(default_factory=set)  # pairs bounded below epsilon
    trace: list = field(default_factory=list)
    fits: int = 0

    @classmethod
    def from_partition(cls, mesh: TetMesh, partition: Partition, epsilon_merge: float = DEFAULT_EPSILON):
        segs = {i: np.asarray(t) for i, t in enumerate(partition.segment_tets) if len(t)}
        st = cls(mesh, segs, epsilon_merge)
        for i in segs:
            st.seg_obb[i] = fit_min_obb(st.points(i))
        return st

    def points(self, i: int) -> np.ndarray:
        return segment_points(self.mesh, self.seg_tets[i])

    @property
    def live(self) -> list:
        return sorted(self.seg_tets)

    def partition(self) -> Partition:
        return Partition.from_segments([self.seg_tets[i] for i in self.live], self.mesh.n_tets).canonical()

    def _check(self, i, j):
        if i == j:
            raise InvalidSegment(f"segment {i} paired with itself")
        for k in (i, j):
            if k not in self.seg_tets:
                raise InvalidSegment(f"segment {k} is not live")

    def fresh_bavf(self, i: int, j: int) -> float:
        """Direct recomputation, bypassing the cache."""
        self._check(i, j)
        union = np.concatenate([self.seg_tets[i], self.seg_tets[j]])
        bij = fit_min_obb(segment_points(self.mesh, union))
        self.fits += 1
        return (self.seg_obb[i].volume + self.seg_obb[j].volume - bij.volume) / self.mesh.volume

    def _score(self, i: int, j: int) -> None:
        key = (min(i, j), max(i, j))
        vi, vj = self.seg_obb[i].volume, self.seg_obb[j].volume
        hull = _hull_volume(np.vstack([self.points(i), self.points(j)]))
        if (vi + vj - hull) / self.mesh.volume < self.epsilon_merge - 1e-12:
            self.pruned.add(key)
            return
        self.pair_scores[key] = self.fresh_bavf(*key)

    def fill(self) -> None:
        live = self.live
        for a, i in enumerate(live):
            for j in live[a + 1:]:
                self._score(i, j)

    def best_pair(self):
        """Highest cached score, ties to the lowest (i, j)."""
        if not self.pair_scores:
            return None, -np.inf
        key = min(self.pair_scores, key=lambda k: (-self.pair_scores[k], k))
        return key, self.pair_scores[key]

    def merge(self, i: int, j: int) -> None:
        """Merge j into i (i < j keeps the lower id) and rescore pairs with i."""
        self._check(i, j)
        i, j = min(i, j), max(i, j)
        self.seg_tets[i] = np.sort(np.concatenate([self.seg_tets[i], self.seg_tets.pop(j)]))
        self.seg_obb.pop(j)
        self.seg_obb[i] = fit_min_obb(self.points(i))
        for cache in (self.pair_scores, self.pruned):
            stale = [k for k in cache if i in k or j in k]
            for k in stale:
                cache.remove(k) if isinstance(cache, set) else cache.pop(k)
        for k in self.live:
            if k != i:
                self._score(i, k)


def bavf(mesh: TetMesh, state: MergeState, i: int, j: int) -> float:
    """Bounding-volume gain of merging segments i and j (cached when known)."""
    state._check(i, j)
    key = (min(i, j), max(i, j))
    if key in state.pair_scores:
        return state.pair_scores[key]
    return state.fresh_bavf(*key)


def merge_all(mesh: TetMesh, partition: Partition, epsilon_merge: float = DEFAULT_EPSILON,
              trace: list | None = None, audit=None) -> Partition:
    """Merge the best pair while its gain is at least ``epsilon_merge``.

    ``audit(state)`` is called after the initial fill and after every merge.
    """
    st = MergeState.from_partition(mesh, partition, epsilon_merge)
    st.fill()
    if audit is not None:
        audit(st)
    while len(st.seg_tets) > 1:
        key, score = st.best_pair()
        if key is None or score < epsilon_merge:
            break
        st.merge(*key)
        row = {"merge": list(key), "bavf": score, "segments": len(st.seg_tets)}
        st.trace.append(row)
        if trace is not None:
            trace.append(row)
        if audit is not None:
            audit(st)
    logger.info("merged %d -> %d segments (%d box fits)", partition.n_segments, len(st.seg_tets), st.fits)
    return st.partition()


def boxes_from_partition(mesh: TetMesh, partition: Partition, unit: float | None = None) -> BoxSet:
    boxes = [fit_min_obb(segment_points(mesh, t)) for t in partition.segment_tets if len(t)]
    return BoxSet(boxes, default_unit(mesh) if unit is None else unit)


def dump_trace(trace, path) -> None:
    with open(path, "w") as fh:
        json.dump(trace, fh, indent=1)
