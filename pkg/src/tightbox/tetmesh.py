"""Tetrahedral meshes: loading, validation, adjacency and point location.

A :class:`TetMesh` is immutable once built. Every tetrahedron is stored with
positive orientation, and face adjacency is found by hashing the sorted vertex
triple of each face.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DegenerateMesh, EmptyMesh, ParseError

logger = logging.getLogger(__name__)

UNASSIGNED = -1
BARY_TOL = 1e-9
DEGENERATE_TOL = 1e-12
GRID_DIVISIONS = 64

# face k of a tet is opposite vertex k
_FACE_LOCAL = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def signed_volumes(vertices, tets):
    a = vertices[tets[:, 0]]
    d1 = vertices[tets[:, 1]] - a
    d2 = vertices[tets[:, 2]] - a
    d3 = vertices[tets[:, 3]] - a
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


class _GridIndex:
    """Uniform grid over the mesh AABB mapping cells to overlapping tets."""

    def __init__(self, mesh: "TetMesh", divisions: int = GRID_DIVISIONS):
        lo, hi = mesh.bounds
        diag = max(mesh.diagonal, 1e-300)
        self.cell = diag / divisions
        self.origin = lo
        self.dims = np.maximum(np.ceil((hi - lo) / self.cell).astype(np.int64), 1)

        corners = mesh.vertices[mesh.tets]
        cmin = self._cell_of(corners.min(axis=1))
        cmax = self._cell_of(corners.max(axis=1))
        span = cmax - cmin + 1
        counts = span.prod(axis=1)
        owner = np.repeat(np.arange(len(mesh.tets)), counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        r = np.arange(counts.sum()) - np.repeat(starts, counts)
        sx = span[owner, 0]
        sy = span[owner, 1]
        ix = cmin[owner, 0] + r % sx
        iy = cmin[owner, 1] + (r // sx) % sy
        iz = cmin[owner, 2] + r // (sx * sy)
        flat = self._flat(np.stack([ix, iy, iz], axis=1))

        order = np.argsort(flat, kind="stable")
        self.cell_tets = owner[order]
        ncell = int(self.dims.prod())
        self.offsets = np.zeros(ncell + 1, dtype=np.int64)
        np.add.at(self.offsets, flat + 1, 1)
        np.cumsum(self.offsets, out=self.offsets)

    def _cell_of(self, pts):
        idx = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.dims - 1)

    def _flat(self, idx):
        return (idx[:, 2] * self.dims[1] + idx[:, 1]) * self.dims[0] + idx[:, 0]

    def candidates(self, pts):
        """Return (point_index, tet_index) candidate pairs for ``pts``."""
        flat = self._flat(self._cell_of(pts))
        start = self.offsets[flat]
        counts = self.offsets[flat + 1] - start
        pidx = np.repeat(np.arange(len(pts)), counts)
        base = np.repeat(start - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        tidx = self.cell_tets[base + np.arange(counts.sum())]
        return pidx, tidx


@dataclass(eq=False)
class TetMesh:
    """A validated tetrahedral mesh of a solid shape."""

    vertices: np.ndarray
    tets: np.ndarray
    tet_volume: np.ndarray = field(init=False)
    tet_centroid: np.ndarray = field(init=False)
    face_adjacency: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.tets, dtype=np.int64)
        if t.ndim != 2 or t.shape[0] == 0:
            raise EmptyMesh("mesh has no tetrahedra")
        if t.shape[1] != 4 or v.ndim != 2 or v.shape[1] != 3:
            raise ParseError(f"bad array shapes: vertices {v.shape}, tets {t.shape}")
        if t.min() < 0 or t.max() >= len(v):
            raise ParseError(f"tet references vertex outside 0..{len(v) - 1}")
        if not np.isfinite(v).all():
            raise ParseError("non-finite vertex coordinates")

        vol = signed_volumes(v, t)
        used = v[np.unique(t)]
        diag = float(np.linalg.norm(used.max(axis=0) - used.min(axis=0)))
        bad = np.abs(vol) <= DEGENERATE_TOL * diag**3
        if bad.any():
            raise DegenerateMesh(f"{int(bad.sum())} tets with (near) zero volume, first {int(np.argmax(bad))}")
        neg = vol < 0
        if neg.any():
            t = t.copy()
            t[neg, 0], t[neg, 1] = t[neg, 1], t[neg, 0].copy()
            vol = np.abs(vol)

        self.vertices = v
        self.tets = t
        self.tet_volume = vol
        self.tet_centroid = v[t].mean(axis=1)
        self.face_adjacency = self._build_adjacency(t)
        self._bounds = (used.min(axis=0), used.max(axis=0))
        self._index = None
        self._bary = None
        _freeze(self.vertices, self.tets, self.tet_volume, self.tet_centroid, self.face_adjacency)

    @staticmethod
    def _build_adjacency(tets):
        n = len(tets)
        faces = np.sort(tets[:, _FACE_LOCAL].reshape(-1, 3), axis=1)
        owner = np.repeat(np.arange(n), 4)
        slot = np.tile(np.arange(4), n)
        order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
        f = faces[order]
        same = np.all(f[1:] == f[:-1], axis=1)
        if same[:-1].size and np.any(same[:-1] & same[1:]):
            raise ParseError("a triangular face is shared by more than two tetrahedra")
        adj = np.full((n, 4), -1, dtype=np.int64)
        k = np.nonzero(same)[0]
        a, b = order[k], order[k + 1]
        adj[owner[a], slot[a]] = owner[b]
        adj[owner[b], slot[b]] = owner[a]
        return adj

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def volume(self) -> float:
        return float(self.tet_volume.sum())

    @property
    def bounds(self):
        return self._bounds

    @property
    def diagonal(self) -> float:
        lo, hi = self._bounds
        return float(np.linalg.norm(hi - lo))

    def neighbors(self, t: int) -> np.ndarray:
        row = self.face_adjacency[t]
        return row[row >= 0]

    def boundary_faces(self) -> np.ndarray:
        """Outward-oriented boundary triangles as an (F, 3) vertex index array."""
        tt, kk = np.nonzero(self.face_adjacency < 0)
        # outward orientation of face k: opposite vertex lies on the negative side
        local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
        return self.tets[tt[:, None], local[kk]]

    @property
    def index(self) -> _GridIndex:
        if self._index is None:
            self._index = _GridIndex(self)
        return self._index

    def barycentric_frames(self):
        """Per-tet (origin, inverse edge matrix) for barycentric coordinates."""
        if self._bary is None:
            p = self.vertices[self.tets]
            edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
            self._bary = (p[:, 0], np.linalg.inv(edges))
        return self._bary


@dataclass(eq=False)
class Partition:
    """Disjoint assignment of tets to segments ``0..K-1``."""

    labels: np.ndarray
    segment_tets: list = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        k = int(self.labels.max()) + 1 if self.labels.size else 0
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(k + 1))
        self.segment_tets = [order[bounds[i]:bounds[i + 1]] for i in range(k)]

    @property
    def n_segments(self) -> int:
        return len(self.segment_tets)

    @property
    def complete(self) -> bool:
        return bool(np.all(self.labels >= 0))

    @classmethod
    def from_segments(cls, segments, n_tets: int) -> "Partition":
        labels = np.full(n_tets, UNASSIGNED, dtype=np.int64)
        for i, seg in enumerate(segments):
            labels[np.asarray(list(seg), dtype=np.int64)] = i
        return cls(labels)

    def canonical(self) -> "Partition":
        """Relabel segments in order of their lowest tet index."""
        live = [s for s in self.segment_tets if len(s)]
        live.sort(key=lambda s: int(s.min()))
        return Partition.from_segments(live, len(self.labels))

    def as_sets(self):
        return {frozenset(s.tolist()) for s in self.segment_tets if len(s)}


def points_in_mesh(mesh: TetMesh, points, chunk: int = 200_000) -> np.ndarray:
    """Vectorized point location: True where a point lies in some tet."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    lo, hi = mesh.bounds
    pad = BARY_TOL * max(mesh.diagonal, 1.0)
    inbox = np.nonzero(np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1))[0]
    origin, inv = mesh.barycentric_frames()
    index = mesh.index
    for s in range(0, len(inbox), chunk):
        sel = inbox[s:s + chunk]
        pidx, tidx = index.candidates(pts[sel])
        lam = np.einsum("nij,nj->ni", inv[tidx], pts[sel][pidx] - origin[tidx])
        ok = (lam >= -BARY_TOL).all(axis=1) & (lam.sum(axis=1) <= 1 + BARY_TOL)
        out[sel[np.unique(pidx[ok])]] = True
    return out


def point_in_mesh(mesh: TetMesh, p) -> bool:
    return bool(points_in_mesh(mesh, np.asarray(p, dtype=float).reshape(1, 3))[0])


def connected_components(mesh: TetMesh, tet_subset) -> list:
    """Split ``tet_subset`` into face-connected components.

    Components are returned as sorted index arrays, ordered by their lowest
    tet index.
    """
    sub = np.unique(np.fromiter(tet_subset, dtype=np.int64) if not isinstance(tet_subset, np.ndarray)
                    else tet_subset.astype(np.int64))
    if sub.size == 0:
        return []
    local = np.full(mesh.n_tets, -1, dtype=np.int64)
    local[sub] = np.arange(sub.size)
    nbr = local[mesh.face_adjacency[sub]]
    nbr[mesh.face_adjacency[sub] < 0] = -1
    rows, cols = np.nonzero(nbr >= 0)
    graph = sparse.coo_matrix(
        (np.ones(rows.size), (rows, nbr[rows, cols])), shape=(sub.size, sub.size)
    )
    _, lab = csgraph.connected_components(graph, directed=False)
    comps = {}
    for i, c in enumerate(lab):
        comps.setdefault(c, []).append(sub[i])
    return sorted((np.array(c) for c in comps.values()), key=lambda c: int(c[0]))


# ---------------------------------------------------------------------------
# file formats


def _data_lines(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _read_node_ele(prefix: Path):
    node_lines = list(_data_lines(prefix.with_suffix(".node")))
    ele_lines = list(_data_lines(prefix.with_suffix(".ele")))
    try:
        n_pts, dim = int(node_lines[0][0]), int(node_lines[0][1])
        if dim != 3:
            raise ParseError(f"expected 3D nodes, got dimension {dim}")
        rows = node_lines[1:1 + n_pts]
        base = int(rows[0][0])
        ids = np.array([int(r[0]) for r in rows])
        if not np.array_equal(ids, np.arange(base, base + n_pts)):
            raise ParseError("node ids are not consecutive")
        verts = np.array([[float(x) for x in r[1:4]] for r in rows])
        n_tets, per = int(ele_lines[0][0]), int(ele_lines[0][1])
        if per not in (4, 10):
            raise ParseError(f"unsupported nodes per tet: {per}")
        tets = np.array([[int(x) for x in r[1:5]] for r in ele_lines[1:1 + n_tets]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed node/ele pair {prefix}: {exc}") from exc
    if len(verts) != n_pts or len(tets) != n_tets:
        raise ParseError("node/ele record count does not match header")
    if n_tets == 0:
        raise EmptyMesh("mesh has no tetrahedra")
    return verts, tets.reshape(-1, 4) - base


def _read_json(path: Path):
    try:
        data = json.loads(path.read_text())
        verts = np.asarray(data["vertices"], dtype=float)
        tets = np.asarray(data["tets"], dtype=np.int64)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed mesh json {path}: {exc}") from exc
    if tets.size == 0:
        raise EmptyMesh("mesh has no tetrahedra")
    return verts.reshape(-1, 3), tets.reshape(-1, 4)


def load_tetmesh(path, format: str | None = None) -> TetMesh:
    """Load a mesh from ``.json`` or a TetGen ``.node``/``.ele`` pair."""
    path = Path(path)
    if format is None:
        format = "json" if path.suffix == ".json" else "node_ele"
    if format == "json":
        verts, tets = _read_json(path)
    elif format == "node_ele":
        prefix = path.with_suffix("") if path.suffix in (".node", ".ele") else path
        verts, tets = _read_node_ele(prefix)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    return TetMesh(verts, tets)


def save_json(mesh: TetMesh, path) -> None:
    Path(path).write_text(json.dumps({"vertices": mesh.vertices.tolist(), "tets": mesh.tets.tolist()}))


def save_node_ele(mesh: TetMesh, prefix, base: int = 1) -> None:
    prefix = Path(prefix)
    lines = [f"{len(mesh.vertices)} 3 0 0"]
    lines += [f"{i + base} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    prefix.with_suffix(".node").write_text("\n".join(lines) + "\n")
    lines = [f"{len(mesh.tets)} 4 0"]
    lines += [f"{i + base} " + " ".join(str(v + base) for v in t) for i, t in enumerate(mesh.tets.tolist())]
    prefix.with_suffix(".ele").write_text("\n".join(lines) + "\n")
