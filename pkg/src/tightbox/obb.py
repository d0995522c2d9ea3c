"""Oriented bounding boxes and minimum-volume fitting.

A box is a rotation ``R`` (world <- box, columns are the box axes) plus two
corners ``lo`` and ``hi`` expressed in the rotated frame about the world
origin. A point ``p`` is inside when ``lo <= R.T @ p <= hi``. A box whose
``lo`` exceeds ``hi`` in any component is treated as deleted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DeletedBox, EmptyPointSet

CONTAIN_EPS = 1e-9
FLAT_EPS = 1e-9

# corner bit layout: bit0 -> x, bit1 -> y, bit2 -> z
_CORNER_BITS = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)], dtype=bool)
_BOX_TRIANGLES = np.array([
    [0, 2, 1], [1, 2, 3],  # z = lo
    [4, 5, 6], [5, 7, 6],  # z = hi
    [0, 1, 4], [1, 5, 4],  # y = lo
    [2, 6, 3], [3, 6, 7],  # y = hi
    [0, 4, 2], [2, 4, 6],  # x = lo
    [1, 3, 5], [3, 7, 5],  # x = hi
])


def contain_eps(ex, ey, ez):
    """Containment tolerance for a box with the given extents (scalars or arrays)."""
    return CONTAIN_EPS * np.maximum(np.sqrt(ex * ex + ey * ey + ez * ez), 1e-12)


@dataclass(frozen=True, eq=False)
class Obb:
    rotation: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        # boxes are immutable, so the scalar summaries are computed once
        ext = self.hi - self.lo
        deleted = bool(ext[0] < 0 or ext[1] < 0 or ext[2] < 0)
        object.__setattr__(self, "_deleted", deleted)
        object.__setattr__(self, "_volume", 0.0 if deleted else float(ext[0] * ext[1] * ext[2]))
        object.__setattr__(self, "_eps", contain_eps(ext[0], ext[1], ext[2]))

    @property
    def deleted(self) -> bool:
        return self._deleted

    @property
    def extents(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return self._volume

    @property
    def center(self) -> np.ndarray:
        return self.rotation @ ((self.lo + self.hi) / 2)

    @property
    def eps(self) -> float:
        return self._eps

    def corners(self) -> np.ndarray:
        local = np.where(_CORNER_BITS, self.hi, self.lo)
        return local @ self.rotation.T

    def local(self, points) -> np.ndarray:
        # elementwise rather than matmul so a row's result never depends on
        # which other rows are in the batch
        p = np.asarray(points, dtype=float)
        R = self.rotation
        return p[:, 0:1] * R[0] + p[:, 1:2] * R[1] + p[:, 2:3] * R[2]

    def contains(self, points) -> np.ndarray:
        """Vectorized epsilon-inclusive containment test."""
        if self.deleted:
            return np.zeros(len(np.atleast_2d(points)), dtype=bool)
        q = self.local(np.atleast_2d(points))
        e = self.eps
        return np.all((q >= self.lo - e) & (q <= self.hi + e), axis=1)

    def sdf(self, points) -> np.ndarray:
        """Signed distance to the box surface, negative inside."""
        q = self.local(np.atleast_2d(points))
        c = (self.lo + self.hi) / 2
        d = np.abs(q - c) - (self.hi - self.lo) / 2
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return outside + inside

    def replace(self, rotation=None, lo=None, hi=None) -> "Obb":
        return Obb(
            self.rotation if rotation is None else rotation,
            self.lo if lo is None else np.asarray(lo, dtype=float),
            self.hi if hi is None else np.asarray(hi, dtype=float),
        )

    def face_step(self, coord: int, delta: float) -> "Obb":
        """Add ``delta`` to one of (lx, ly, lz, rx, ry, rz)."""
        lo, hi = self.lo.copy(), self.hi.copy()
        if coord < 3:
            lo[coord] += delta
        else:
            hi[coord - 3] += delta
        return Obb(self.rotation, lo, hi)

    def to_dict(self) -> dict:
        return {
            "R": self.rotation.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "deleted": self.deleted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Obb":
        return cls(np.asarray(d["R"], dtype=float), np.asarray(d["lo"], dtype=float),
                   np.asarray(d["hi"], dtype=float))

    @classmethod
    def axis_aligned(cls, lo, hi) -> "Obb":
        return cls(np.eye(3), np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    @classmethod
    def from_center(cls, center, half_extents, rotation=None) -> "Obb":
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        c = R.T @ np.asarray(center, dtype=float)
        h = np.asarray(half_extents, dtype=float)
        return cls(R, c - h, c + h)


def box_volume(b: Obb) -> float:
    if b.deleted:
        raise DeletedBox("volume of a deleted box")
    return float(np.prod(b.hi - b.lo))


def contains(b: Obb, p) -> bool:
    return bool(b.contains(np.asarray(p, dtype=float).reshape(1, 3))[0])


def boxes_to_json(boxes, **extra) -> str:
    payload = dict(extra)
    payload["boxes"] = [b.to_dict() for b in boxes]
    return json.dumps(payload, indent=1, sort_keys=True)


def boxes_to_obj(boxes) -> str:
    lines, base = [], 1
    for i, b in enumerate(boxes):
        if b.deleted:
            continue
        lines.append(f"o box{i}")
        lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in b.corners()]
        lines += [f"f {a + base} {c + base} {d + base}" for a, c, d in _BOX_TRIANGLES]
        base += 8
    return "\n".join(lines) + "\n"


def box_surface_triangles(b: Obb) -> np.ndarray:
    return b.corners()[_BOX_TRIANGLES]


# ---------------------------------------------------------------------------
# fitting


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _rotation_from(u, v) -> np.ndarray:
    w = _cross(u, v)
    return np.column_stack([u, v, w / np.linalg.norm(w)])


def _plane_basis(n):
    a = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
    u = _cross(n, a)
    u /= np.linalg.norm(u)
    return u, _cross(n, u)


def _min_area_rect(pts2):
    """Rotating-calipers minimum-area rectangle; returns (area, angle)."""
    try:
        hull = pts2[ConvexHull(pts2).vertices]
    except (QhullError, ValueError):
        hull = pts2
    edges = np.roll(hull, -1, axis=0) - hull
    ang = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2))
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    a = hull[:, 0] * c + hull[:, 1] * s
    b = -hull[:, 0] * s + hull[:, 1] * c
    area = (a.max(axis=1) - a.min(axis=1)) * (b.max(axis=1) - b.min(axis=1))
    k = int(np.argmin(area))
    return float(area[k]), float(ang[k])


def _box_for(points, R):
    q = points @ R
    return Obb(R, q.min(axis=0), q.max(axis=0))


def _face_aligned(points, n):
    u, v = _plane_basis(n)
    area, theta = _min_area_rect(points @ np.column_stack([u, v]))
    a = np.cos(theta) * u + np.sin(theta) * v
    b = _cross(n, a)
    return _box_for(points, _rotation_from(a, b))


def _pca_rotation(points):
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=True)
    return _rotation_from(vt[0], vt[1])


def _inflate_flat(box: Obb, scale: float) -> Obb:
    ext = box.hi - box.lo
    eps = FLAT_EPS * max(scale, 1.0)
    thin = ext < eps
    if not thin.any():
        return box
    pad = np.where(thin, eps / 2, 0.0)
    return Obb(box.rotation, box.lo - pad, box.hi + pad)


def _face_axes(normals) -> np.ndarray:
    """Distinct face normals up to sign (n and -n give the same box)."""
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    lead = n[np.arange(len(n)), np.argmax(np.abs(n) > 1e-9, axis=1)]
    n = n * np.where(lead < 0, -1.0, 1.0)[:, None]
    n = np.unique(np.round(n, 9), axis=0)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def fit_min_obb(points) -> Obb:
    """Approximate minimum-volume oriented box containing ``points``.

    Each convex-hull face normal is tried as one box axis, with the other two
    chosen by rotating calipers in the face plane. The PCA frame and the
    axis-aligned box are also candidates, so the result is never larger than
    the AABB.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointSet("cannot fit a box to zero points")
    pts = np.unique(pts, axis=0)
    scale = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    candidates = [_box_for(pts, np.eye(3))]
    if len(pts) >= 3:
        candidates.append(_box_for(pts, _pca_rotation(pts)))
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        hull = None
    if hull is not None:
        hpts = pts[hull.vertices]
        best_n, best_vol = None, np.inf
        for n in _face_axes(hull.equations[:, :3]):
            u, v = _plane_basis(n)
            area, _ = _min_area_rect(hpts @ np.column_stack([u, v]))
            h = hpts @ n
            vol = area * (h.max() - h.min())
            if vol < best_vol:
                best_n, best_vol = n, vol
        candidates.append(_face_aligned(hpts, best_n))
    elif len(pts) >= 3:
        # coplanar or collinear: calipers in the best-fit plane
        R = _pca_rotation(pts)
        candidates.append(_face_aligned(pts, R[:, 2]))

    vols = [float(np.prod(c.hi - c.lo)) for c in candidates]
    best = candidates[int(np.argmin(vols))]
    return _inflate_flat(best, scale)


def refit_rotation(b: Obb, covered_points) -> Obb:
    """Re-orient a box to the minimum box of the points it covers."""
    pts = np.asarray(covered_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointSet("box covers no points")
    return fit_min_obb(pts)
