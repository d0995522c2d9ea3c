"""Synthetic box-compound shapes with known decompositions.

Every part is filled with a lattice of cubes, each split into five tets. The
central tet of a cube uses the corners of even global parity, so neighbouring
cubes always agree on their shared face diagonals and the result is
conforming. Axis-aligned parts whose bounds sit on the ``1/tets_per_unit``
grid share one global lattice; other parts get their own local lattice and
are stitched only where vertices coincide.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .obb import Obb
from .oversegment import PreSegment, save_presegs
from .tetmesh import Partition, TetMesh, save_json, save_node_ele

logger = logging.getLogger(__name__)

MODES = ("clean", "over_merged", "under_covered")
SHRINK = 0.8
_ROUND = 1e-9

_CORNERS = np.array([[(b >> k) & 1 for k in range(3)] for b in range(8)])


@dataclass
class Part:
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half = np.asarray(self.half, dtype=float)
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=float)

    @classmethod
    def from_bounds(cls, lo, hi, rotation=None) -> "Part":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls((lo + hi) / 2, (hi - lo) / 2, rotation)

    @property
    def R(self) -> np.ndarray:
        return np.eye(3) if self.rotation is None else self.rotation

    @property
    def volume(self) -> float:
        return float(np.prod(2 * self.half))

    def box(self, scale: float = 1.0) -> Obb:
        return Obb.from_center(self.center, self.half * scale, self.R)


@dataclass
class CompoundSpec:
    parts: list
    tets_per_unit: float = 4.0
    seed: int = 0
    name: str = ""
    merge_pair: tuple = (0, 1)  # parts sharing one pre-segment when over-merged
    shrink_part: int = 0  # part whose pre-segment shrinks when under-covered

    def validate(self) -> None:
        if not self.parts:
            raise InvalidSpec("a compound needs at least one part")
        if not self.tets_per_unit > 0:
            raise InvalidSpec("tets_per_unit must be positive")
        for p in self.parts:
            if p.center.shape != (3,) or p.half.shape != (3,) or np.any(p.half <= 0):
                raise InvalidSpec("each part needs a 3-vector center and positive half extents")
            R = p.R
            if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9) \
                    or np.linalg.det(R) < 0:
                raise InvalidSpec("part rotation must be a proper rotation")


@dataclass
class Fixture:
    name: str
    spec: CompoundSpec
    mesh: TetMesh
    labels: Partition
    presegs: dict = field(default_factory=dict)  # mode -> list of PreSegment
    overlap: bool = False
    conforming: bool = True

    @property
    def gt_boxes(self) -> list:
        return [p.box() for p in self.spec.parts]


def _obb_overlap(a: Obb, b: Obb, tol: float = 1e-9) -> bool:
    """Separating-axis test for interior overlap of two boxes."""
    axes = [a.rotation[:, i] for i in range(3)] + [b.rotation[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(a.rotation[:, i], b.rotation[:, j])
            if np.linalg.norm(c) > 1e-9:
                axes.append(c / np.linalg.norm(c))
    ca, cb = a.corners(), b.corners()
    for ax in axes:
        pa, pb = ca @ ax, cb @ ax
        if pa.max() <= pb.min() + tol or pb.max() <= pa.min() + tol:
            return False
    return True


def _on_grid(x, h) -> bool:
    return bool(np.all(np.abs(x / h - np.round(x / h)) < 1e-9))


def _part_lattice(part: Part, tpu: float):
    """Vertices (world) and 5-tet cells for one part."""
    h = 1.0 / tpu
    lo, hi = part.center - part.half, part.center + part.half
    if part.rotation is None and _on_grid(lo, h) and _on_grid(hi, h):
        start = np.round(lo / h).astype(int)
        n = np.round((hi - lo) / h).astype(int)
        step = np.full(3, h)
        origin = np.zeros(3)
        R = np.eye(3)
        base = start * step
    else:
        n = np.maximum(1, np.round(2 * part.half * tpu).astype(int))
        start = np.zeros(3, dtype=int)
        step = 2 * part.half / n
        R = part.R
        origin = part.center
        base = -part.half
    ii, jj, kk = np.meshgrid(*(np.arange(m) for m in n), indexing="ij")
    cells = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    corner_idx = cells[:, None, :] + _CORNERS[None, :, :]  # (C, 8, 3) local lattice index
    parity = (corner_idx + start).sum(axis=2) % 2
    local = base + corner_idx * step
    world = local @ R.T + origin
    tets = []
    for c in range(len(cells)):
        even = np.nonzero(parity[c] == 0)[0]
        odd = np.nonzero(parity[c] == 1)[0]
        tets.append(even)
        for o in odd:
            tets.append([o, o ^ 1, o ^ 2, o ^ 4])
    tets = np.asarray(tets).reshape(len(cells), 5, 4)
    tets = tets + (np.arange(len(cells)) * 8)[:, None, None]
    return world.reshape(-1, 3), tets.reshape(-1, 4)


def _build_mesh(spec: CompoundSpec, stitch: bool = True):
    verts, tets, labels = [], [], []
    offset = 0
    for k, part in enumerate(spec.parts):
        v, t = _part_lattice(part, spec.tets_per_unit)
        verts.append(v)
        tets.append(t + offset)
        labels.append(np.full(len(t), k))
        offset += len(v)
    verts = np.vstack(verts)
    if not stitch:
        return TetMesh(verts, np.vstack(tets)), np.concatenate(labels)
    key = np.round(verts / _ROUND).astype(np.int64)
    uniq, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return TetMesh(verts[first], inverse.ravel()[np.vstack(tets)]), np.concatenate(labels)


def _presegs(spec: CompoundSpec, mode: str) -> list:
    parts = spec.parts
    if mode == "clean" or (mode == "over_merged" and len(parts) < 2):
        return [PreSegment.from_box(p.box(), source=f"part{k}") for k, p in enumerate(parts)]
    if mode == "over_merged":
        i, j = spec.merge_pair
        R = parts[i].R
        q = np.vstack([parts[i].box().corners(), parts[j].box().corners()]) @ R
        joint = Obb(R, q.min(axis=0), q.max(axis=0))
        out = [PreSegment.from_box(joint, source=f"part{i}+{j}")]
        out += [PreSegment.from_box(p.box(), source=f"part{k}") for k, p in enumerate(parts) if k not in (i, j)]
        return out
    if mode == "under_covered":
        return [PreSegment.from_box(p.box(SHRINK if k == spec.shrink_part else 1.0), source=f"part{k}")
                for k, p in enumerate(parts)]
    raise InvalidSpec(f"unknown corruption mode {mode!r}")


def generate(spec: CompoundSpec) -> Fixture:
    """Mesh, ground-truth part labels and pre-segments in every corruption mode."""
    spec.validate()
    boxes = [p.box() for p in spec.parts]
    overlap = any(_obb_overlap(boxes[i], boxes[j])
                  for i in range(len(boxes)) for j in range(i + 1, len(boxes)))
    if overlap:
        # stitching would put three tets on a face; keep the parts as separate pieces
        logger.warning("compound %s has overlapping parts; parts are meshed unstitched", spec.name)
    mesh, labels = _build_mesh(spec, stitch=not overlap)
    conforming = all(p.rotation is None for p in spec.parts)
    return Fixture(spec.name, spec, mesh, Partition(labels), {m: _presegs(spec, m) for m in MODES},
                   overlap, conforming)


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])


def unit_cube(tpu: float = 4) -> CompoundSpec:
    return CompoundSpec([Part.from_bounds([0, 0, 0], [1, 1, 1])], tpu, name="unit_cube")


def l_shape(tpu: float = 4) -> CompoundSpec:
    return CompoundSpec([Part.from_bounds([0, 0, 0], [1, 1, 1]),
                         Part.from_bounds([1, 0.5, 0], [2, 1.5, 1])], tpu, name="l_shape")


def plus_shape(tpu: float = 4) -> CompoundSpec:
    return CompoundSpec([Part.from_bounds([0, 0, 0], [0.5, 2, 1]),
                         Part.from_bounds([-2, 0.75, 0], [0, 1.25, 1]),
                         Part.from_bounds([0.5, 0.75, 0], [2.5, 1.25, 1])], tpu, name="plus_shape")


def h_shape(tpu: float = 4) -> CompoundSpec:
    return CompoundSpec([Part.from_bounds([0, 0, 0], [0.5, 2, 0.5]),
                         Part.from_bounds([1.5, 0, 0], [2, 2, 0.5]),
                         Part.from_bounds([0.5, 0.75, 0], [1.5, 1.25, 0.5])], tpu, name="h_shape")


_LEG_XY = ((0.4, 0.4), (1.6, 0.4), (0.4, 1.2), (1.6, 1.2))


def table(tpu: float = 5) -> CompoundSpec:
    parts = [Part.from_bounds([0, 0, 1], [2, 1.6, 1.2])]
    parts += [Part([x, y, 0.5], [0.2, 0.2, 0.5]) for x, y in _LEG_XY]
    return CompoundSpec(parts, tpu, name="table")


def rotated_leg_table(tpu: float = 5, angle: float = 30.0) -> CompoundSpec:
    parts = [Part.from_bounds([0, 0, 1], [2, 1.6, 1.2])]
    parts += [Part([x, y, 0.5], [0.2, 0.2, 0.5], rot_z(angle)) for x, y in _LEG_XY]
    return CompoundSpec(parts, tpu, name="rotated_leg_table")


CATALOG = {
    "unit_cube": unit_cube,
    "l_shape": l_shape,
    "plus_shape": plus_shape,
    "h_shape": h_shape,
    "table": table,
    "rotated_leg_table": rotated_leg_table,
}


def catalog(names=None) -> dict:
    return {n: generate(CATALOG[n]()) for n in (names or CATALOG)}


def write_fixture(fx: Fixture, out_dir, mode: str = "clean", node_ele: bool = False) -> Path:
    """Write mesh, pre-segments and labels into ``out_dir`` for the pipeline."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if node_ele:
        save_node_ele(fx.mesh, out / "mesh")
    else:
        save_json(fx.mesh, out / "mesh.json")
    save_presegs(fx.presegs[mode], out / "presegs.json")
    (out / "labels.json").write_text(json.dumps({"labels": fx.labels.labels.tolist()}))
    return out
