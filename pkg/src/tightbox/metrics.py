"""Evaluation metrics for a box decomposition.

Volume metrics (TOV, MOV, VIoU) are estimated by stratified sampling: one
seeded uniform point per cell of a regular grid spanning the joint bounding
box of the shape and all live boxes. Jittering avoids the aliasing a
cell-center grid shows on slivers thinner than a cell.
Chamfer distance uses area-uniform surface samples: for each point set, the
mean squared distance to the nearest point of the other set, both directions
summed, times 1000. mAP assigns every sample point to the box with the lowest
signed distance and scores masks against ground-truth instances at IoU > 0.5.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .coverage import cov, tgt
from .errors import EmptySampleSet, MismatchedBoxSegment, NoLabels
from .obb import box_surface_triangles
from .tetmesh import Partition, TetMesh, points_in_mesh

logger = logging.getLogger(__name__)

DEFAULT_GRID = 96
CD_POINTS = 4096
CD_SCALE = 1000.0
IOU_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class SampleField:
    points: np.ndarray
    in_shape: np.ndarray
    in_box: np.ndarray  # (n_boxes, n_points); rows of deleted boxes are all False
    cell_volume: float
    shape_volume: float  # tet-sum volume of S

    @property
    def in_union(self) -> np.ndarray:
        if len(self.in_box) == 0:
            return np.zeros(len(self.points), dtype=bool)
        return self.in_box.any(axis=0)

    def volume(self, mask) -> float:
        return float(np.count_nonzero(mask)) * self.cell_volume


_SHAPE_CACHE: dict = {}


def _grid(lo, hi, res: int, seed: int):
    step = (hi - lo) / res
    idx = np.stack(np.meshgrid(*[np.arange(res)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    jitter = np.random.default_rng(seed).random(idx.shape)
    return lo + (idx + jitter) * step, float(np.prod(step))


def build_field(mesh: TetMesh, boxes, resolution: int = DEFAULT_GRID, bounds=None, seed: int = 0) -> SampleField:
    """One jittered sample per cell of a ``resolution``^3 grid over the joint AABB (or ``bounds``)."""
    live = [b for b in boxes if not b.deleted]
    if bounds is None:
        lo, hi = mesh.bounds
        if live:
            corners = np.vstack([b.corners() for b in live])
            lo, hi = np.minimum(lo, corners.min(axis=0)), np.maximum(hi, corners.max(axis=0))
    else:
        lo, hi = (np.asarray(x, dtype=float) for x in bounds)
    pts, cell = _grid(lo, hi, resolution, seed)
    key = (id(mesh), resolution, seed, tuple(np.round(lo, 12)), tuple(np.round(hi, 12)))
    in_shape = _SHAPE_CACHE.get(key)
    if in_shape is None or in_shape[0] is not mesh:
        in_shape = (mesh, points_in_mesh(mesh, pts))
        if len(_SHAPE_CACHE) > 16:
            _SHAPE_CACHE.clear()
        _SHAPE_CACHE[key] = in_shape
    in_box = np.array([b.contains(pts) for b in boxes], dtype=bool).reshape(len(boxes), len(pts))
    return SampleField(pts, in_shape[1], in_box, cell, mesh.volume)


def tov(field: SampleField) -> float:
    """Volume of the box union outside the shape, over vol(S)."""
    return field.volume(field.in_union & ~field.in_shape) / field.shape_volume


def viou(field: SampleField) -> float:
    inter = field.volume(field.in_union & field.in_shape)
    union = field.volume(field.in_union | field.in_shape)
    return inter / union if union > 0 else 0.0


def mov(field: SampleField, partition: Partition, boxes, mesh: TetMesh) -> float:
    """Max over live boxes of vol(B_i minus S) / vol(S_i), box i paired with segment i."""
    live = [i for i, b in enumerate(boxes) if not b.deleted]
    if len(live) != partition.n_segments:
        raise MismatchedBoxSegment(f"{len(live)} live boxes vs {partition.n_segments} segments")
    worst = 0.0
    outside = ~field.in_shape
    for seg, i in enumerate(live):
        seg_vol = float(mesh.tet_volume[partition.segment_tets[seg]].sum())
        worst = max(worst, field.volume(field.in_box[i] & outside) / seg_vol)
    return worst


def assign_to_boxes(points, boxes) -> np.ndarray:
    """Index of the live box with the lowest signed distance for each point."""
    live = [i for i, b in enumerate(boxes) if not b.deleted]
    if not live:
        raise EmptySampleSet("no live boxes")
    d = np.stack([boxes[i].sdf(points) for i in live])
    return np.asarray(live)[np.argmin(d, axis=0)]


def box_partition(mesh: TetMesh, boxes) -> Partition:
    """Segments induced by assigning tet centroids to boxes; segment k pairs with the k-th live box."""
    owner = assign_to_boxes(mesh.tet_centroid, boxes)
    live = [i for i, b in enumerate(boxes) if not b.deleted]
    rank = {b: k for k, b in enumerate(live)}
    return Partition(np.array([rank[o] for o in owner]))


def _sample_triangles(tris, n: int, rng) -> np.ndarray:
    tris = np.asarray(tris, dtype=float)
    area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    if len(tris) == 0 or area.sum() <= 0:
        raise EmptySampleSet("surface has zero area")
    idx = rng.choice(len(tris), size=n, p=area / area.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    a, b, c = tris[idx, 0], tris[idx, 1], tris[idx, 2]
    return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c


def mesh_surface_points(mesh: TetMesh, n: int = CD_POINTS, seed: int = 0) -> np.ndarray:
    return _sample_triangles(mesh.vertices[mesh.boundary_faces()], n, np.random.default_rng(seed))


def box_surface_points(boxes, n: int = CD_POINTS, seed: int = 0) -> np.ndarray:
    tris = [box_surface_triangles(b) for b in boxes if not b.deleted]
    if not tris:
        raise EmptySampleSet("no live boxes")
    return _sample_triangles(np.vstack(tris), n, np.random.default_rng(seed + 1))


def chamfer(a, b) -> float:
    """Mean nearest-neighbour squared distance a->b plus b->a, times 1000."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise EmptySampleSet("chamfer needs two nonempty point sets")
    dab, _ = cKDTree(b).query(a)
    dba, _ = cKDTree(a).query(b)
    return CD_SCALE * (float(np.mean(dab ** 2)) + float(np.mean(dba ** 2)))


def average_precision(recall, precision) -> float:
    """All-point interpolated AP."""
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    k = np.nonzero(r[1:] != r[:-1])[0]
    return float(np.sum((r[k + 1] - r[k]) * p[k + 1]))


def instance_map(boxes, labels, points, threshold: float = IOU_THRESHOLD) -> float:
    """AP at IoU > ``threshold`` of box-assigned masks against instance labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise NoLabels("no instance labels")
    if len(labels) != len(points):
        raise NoLabels("labels must cover every point")
    owner = assign_to_boxes(points, boxes)
    preds = [owner == i for i in np.unique(owner)]
    gts = [labels == g for g in np.unique(labels)]
    conf = np.array([p.sum() for p in preds])
    order = sorted(range(len(preds)), key=lambda i: (-conf[i], i))
    matched = set()
    tp = np.zeros(len(preds))
    for rank, i in enumerate(order):
        ious = [np.count_nonzero(preds[i] & g) / np.count_nonzero(preds[i] | g) for g in gts]
        j = int(np.argmax(ious))
        if ious[j] > threshold and j not in matched:
            matched.add(j)
            tp[rank] = 1
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    precision = ctp / np.arange(1, len(preds) + 1)
    return average_precision(recall, precision)


def report(mesh: TetMesh, boxes, labels=None, resolution: int = DEFAULT_GRID, seed: int = 0,
           cd_points: int = CD_POINTS) -> dict:
    """All metrics as one JSON-ready dict."""
    live = [b for b in boxes if not b.deleted]
    out = {"n_box": len(live), "tgt": tgt(mesh, boxes), "cov": cov(mesh, boxes)}
    field = build_field(mesh, boxes, resolution, seed=seed)
    out["tov"] = tov(field)
    out["viou"] = viou(field)
    if live:
        out["mov"] = mov(field, box_partition(mesh, boxes), boxes, mesh)
        out["cd"] = chamfer(mesh_surface_points(mesh, cd_points, seed), box_surface_points(boxes, cd_points, seed))
    else:
        out["mov"] = 0.0
        out["cd"] = None
    if labels is not None and live:
        out["map"] = instance_map(boxes, labels, mesh.tet_centroid)
    else:
        out["map"] = None
    return out
