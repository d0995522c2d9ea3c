"""Pre-segment masks and the initial over-segmentation of a tet mesh.

A pre-segment is either a convex polytope given as halfspaces ``n . x <= d``
or a closed surface (a triangle mesh, or a tet mesh of its own). Each tet
gets a bitmask of the pre-segments containing its centroid. Face-connected
tets with an identical nonempty mask form one segment; every connected
component of mask-less tets becomes a segment of its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as cc_labels

from .errors import InvalidPreSegment, ParseError, PresegNotFound
from .tetmesh import Partition, TetMesh, load_tetmesh, points_in_mesh

logger = logging.getLogger(__name__)

INSIDE_EPS = 1e-7  # relative to the mesh diagonal


@dataclass(frozen=True, eq=False)
class PreSegment:
    planes: np.ndarray | None = None  # (K, 4) rows [nx, ny, nz, d], unit normals
    triangles: np.ndarray | None = None  # (F, 3, 3) closed surface
    tetmesh: TetMesh | None = None
    source: str = ""

    @classmethod
    def from_planes(cls, planes, source: str = "") -> "PreSegment":
        p = np.asarray(planes, dtype=float)
        if p.ndim != 2 or p.shape[1] != 4 or len(p) == 0:
            raise InvalidPreSegment("planes must be a nonempty (K, 4) array")
        if not np.all(np.isfinite(p)):
            raise InvalidPreSegment("non-finite plane coefficients")
        norms = np.linalg.norm(p[:, :3], axis=1)
        if np.any(norms < 1e-12):
            raise InvalidPreSegment("zero plane normal")
        p = p / norms[:, None]
        seg = cls(planes=p, source=source)
        if not seg.has_interior():
            raise InvalidPreSegment("halfspace polytope has an empty interior")
        return seg

    @classmethod
    def from_box(cls, box, source: str = "") -> "PreSegment":
        """Six halfspaces bounding an Obb."""
        R = box.rotation
        rows = []
        for k in range(3):
            n = R[:, k]
            rows.append([*n, box.hi[k]])
            rows.append([*(-n), -box.lo[k]])
        return cls.from_planes(rows, source)

    def has_interior(self) -> bool:
        if self.planes is None:
            return True
        # maximize slack s with n.x + s <= d, s <= 1
        k = len(self.planes)
        A = np.hstack([self.planes[:, :3], np.ones((k, 1))])
        res = linprog(c=[0, 0, 0, -1], A_ub=A, b_ub=self.planes[:, 3],
                      bounds=[(None, None)] * 3 + [(None, 1.0)], method="highs")
        return res.status == 0 and -res.fun > 1e-12

    def inside(self, points, eps: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.planes is not None:
            P = self.planes
            return np.all(pts @ P[:, :3].T <= P[:, 3] + eps, axis=1)
        if self.tetmesh is not None:
            return points_in_mesh(self.tetmesh, pts)
        return winding_number(self.triangles, pts) > 0.5


def winding_number(triangles, points, chunk: int = 4096) -> np.ndarray:
    """Generalized winding number of a closed triangle surface at each point."""
    tri = np.asarray(triangles, dtype=float)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        a = tri[None, :, 0, :] - p[:, None, :]
        b = tri[None, :, 1, :] - p[:, None, :]
        c = tri[None, :, 2, :] - p[:, None, :]
        la, lb, lc = (np.linalg.norm(v, axis=2) for v in (a, b, c))
        det = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ptk,ptk->pt", a, b) * lc
               + np.einsum("ptk,ptk->pt", b, c) * la + np.einsum("ptk,ptk->pt", c, a) * lb)
        out[s:s + chunk] = (2 * np.arctan2(det, den)).sum(axis=1) / (4 * np.pi)
    return out


def _read_obj_triangles(path: Path) -> np.ndarray:
    verts, faces = [], []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(x.split("/")[0]) for x in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not faces:
        raise InvalidPreSegment(f"{path}: no faces")
    return np.asarray(verts)[np.asarray(faces)]


def load_presegs(path) -> list:
    """Read the pre-segment JSON file; mesh paths resolve relative to it."""
    path = Path(path)
    if not path.exists():
        raise PresegNotFound(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    out = []
    for k, entry in enumerate(doc.get("segments", [])):
        name = f"{path.name}#{k}"
        if "planes" in entry:
            out.append(PreSegment.from_planes(entry["planes"], source=name))
            continue
        if "mesh" not in entry:
            raise InvalidPreSegment(f"{name}: needs 'planes' or 'mesh'")
        mp = (path.parent / entry["mesh"]).resolve()
        if not mp.exists():
            raise PresegNotFound(str(mp))
        if mp.suffix.lower() == ".obj":
            out.append(PreSegment(triangles=_read_obj_triangles(mp), source=str(mp)))
        else:
            out.append(PreSegment(tetmesh=load_tetmesh(mp), source=str(mp)))
    return out


def save_presegs(presegs, path) -> None:
    segs = []
    for p in presegs:
        if p.planes is None:
            raise InvalidPreSegment("only halfspace pre-segments can be written inline")
        segs.append({"planes": p.planes.tolist()})
    Path(path).write_text(json.dumps({"segments": segs}, indent=1))


def compute_masks(mesh: TetMesh, presegs) -> np.ndarray:
    """Boolean (n_tets, n_presegs) matrix: centroid of tet t inside pre-segment j."""
    eps = INSIDE_EPS * mesh.diagonal
    masks = np.zeros((mesh.n_tets, len(presegs)), dtype=bool)
    for j, p in enumerate(presegs):
        masks[:, j] = p.inside(mesh.tet_centroid, eps)
    return masks


def _components(mesh: TetMesh, keys: np.ndarray, active: np.ndarray):
    """Face-connected components of active tets joined only across equal keys."""
    adj = mesh.face_adjacency
    t = np.repeat(np.arange(mesh.n_tets), 4)
    nb = adj.ravel()
    ok = (nb >= 0)
    t, nb = t[ok], nb[ok]
    ok = active[t] & active[nb] & (keys[t] == keys[nb])
    g = coo_matrix((np.ones(ok.sum()), (t[ok], nb[ok])), shape=(mesh.n_tets,) * 2)
    _, lab = cc_labels(g, directed=False)
    comps = {}
    for i in np.nonzero(active)[0]:  # ascending, so groups are ordered by lowest tet
        comps.setdefault(lab[i], []).append(i)
    return list(comps.values())


def oversegment(mesh: TetMesh, masks) -> Partition:
    """Split tets into same-mask face-connected groups, then one segment per
    connected uncovered region. Segment ids follow lowest-tet order, covered
    groups first."""
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 1:
        masks = masks[:, None]
    if len(masks) != mesh.n_tets:
        raise ValueError("one mask row per tet required")
    _, keys = np.unique(np.packbits(masks, axis=1), axis=0, return_inverse=True)
    keys = keys.ravel()
    covered = masks.any(axis=1)
    segs = _components(mesh, keys, covered) + _components(mesh, keys, ~covered)
    return Partition.from_segments(segs, mesh.n_tets)


def segment_masks(partition: Partition) -> np.ndarray:
    """One-hot masks, one column per segment (the identity input for oversegment)."""
    m = np.zeros((len(partition.labels), partition.n_segments), dtype=bool)
    m[np.arange(len(partition.labels)), partition.labels] = True
    return m
