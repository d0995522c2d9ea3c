"""Coverage and tightness objectives with an incremental coverage cache.

Coverage is measured on weighted sample points of the tet mesh. By default
there is one sample per tet (its centroid, weighted by the tet volume), so a
tet counts as covered iff its centroid lies in a live box. ``subdivide=True``
uses four samples per tet at the midpoints between centroid and each vertex,
each carrying a quarter of the tet volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .obb import Obb
from .tetmesh import TetMesh

DEFAULT_ALPHA = 100.0


@dataclass(frozen=True, eq=False)
class CoverageSamples:
    points: np.ndarray
    weights: np.ndarray
    owner: np.ndarray  # tet index of each sample
    total: float  # vol(S)

    def __len__(self):
        return len(self.points)


def centroid_samples(mesh: TetMesh) -> CoverageSamples:
    return CoverageSamples(mesh.tet_centroid, mesh.tet_volume, np.arange(mesh.n_tets), mesh.volume)


def subdivided_samples(mesh: TetMesh) -> CoverageSamples:
    corners = mesh.vertices[mesh.tets]
    pts = (corners + mesh.tet_centroid[:, None, :]) / 2
    w = np.repeat(mesh.tet_volume / 4, 4)
    return CoverageSamples(pts.reshape(-1, 3), w, np.repeat(np.arange(mesh.n_tets), 4), mesh.volume)


def samples_for(mesh: TetMesh, subdivide: bool = False) -> CoverageSamples:
    return subdivided_samples(mesh) if subdivide else centroid_samples(mesh)


class CoverageCache:
    """Per-sample cover counts and per-box membership masks.

    Invariant: ``cover_count[j]`` equals the number of live boxes containing
    sample ``j``, and ``member[i]`` is box i's containment mask.
    """

    def __init__(self, samples: CoverageSamples, boxes):
        self.samples = samples
        n = len(samples)
        self.member = []
        self.cover_count = np.zeros(n, dtype=np.int32)
        for b in boxes:
            m = b.contains(samples.points)
            self.member.append(m)
            self.cover_count += m
        self._refresh()

    def _refresh(self):
        zero = self.cover_count == 0
        self.n_uncovered = int(zero.sum())
        self.uncovered_volume = float(self.samples.weights[zero].sum()) if self.n_uncovered else 0.0

    @property
    def coverage(self) -> float:
        if self.n_uncovered == 0:
            return 1.0
        return 1.0 - self.uncovered_volume / self.samples.total

    def covered_points(self, i: int) -> np.ndarray:
        return self.samples.points[self.member[i]]

    def copy(self) -> "CoverageCache":
        new = object.__new__(CoverageCache)
        new.samples = self.samples
        new.member = [m.copy() for m in self.member]
        new.cover_count = self.cover_count.copy()
        new.n_uncovered = self.n_uncovered
        new.uncovered_volume = self.uncovered_volume
        return new

    def set_member(self, i: int, mask: np.ndarray) -> np.ndarray:
        """Replace box i's membership; returns indices whose count changed."""
        old = self.member[i]
        changed = np.nonzero(old != mask)[0]
        if changed.size:
            self.cover_count[changed] += np.where(mask[changed], 1, -1).astype(np.int32)
            self.member[i] = mask
            self._refresh()
        return changed

    def append(self, box: Obb) -> int:
        self.member.append(np.zeros(len(self.samples), dtype=bool))
        i = len(self.member) - 1
        self.set_member(i, box.contains(self.samples.points))
        return i


def _aabb(corners):
    return corners.min(axis=0), corners.max(axis=0)


def apply_box_update(cache: CoverageCache, box_index: int, old: Obb, new: Obb) -> CoverageCache:
    """Update ``cache`` in place after box ``box_index`` changed from old to new.

    Only samples inside the AABB of old and new are re-tested.
    """
    boxes = [b for b in (old, new) if not b.deleted]
    mask = cache.member[box_index].copy()
    if not boxes:
        cache.set_member(box_index, np.zeros_like(mask))
        return cache
    lo, hi = _aabb(np.vstack([b.corners() for b in boxes]))
    pad = max(b.eps for b in boxes)
    pts = cache.samples.points
    near = np.nonzero(np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1))[0]
    mask[near] = new.contains(pts[near])
    cache.set_member(box_index, mask)
    return cache


def live_volume_sum(boxes) -> float:
    return float(sum(b.volume for b in boxes if not b.deleted))


def cov(mesh: TetMesh, boxes, subdivide: bool = False) -> float:
    """Fraction of shape volume whose samples lie in some live box."""
    s = samples_for(mesh, subdivide)
    covered = np.zeros(len(s), dtype=bool)
    for b in boxes:
        if not b.deleted:
            covered |= b.contains(s.points)
    if covered.all():
        return 1.0
    return 1.0 - float(s.weights[~covered].sum()) / s.total


def tgt(mesh: TetMesh, boxes) -> float:
    """Sum of live box volumes over the shape volume."""
    return live_volume_sum(boxes) / mesh.volume


def soft_objective(mesh: TetMesh, boxes, alpha: float = DEFAULT_ALPHA, subdivide: bool = False) -> float:
    return tgt(mesh, boxes) - alpha * cov(mesh, boxes, subdivide)
