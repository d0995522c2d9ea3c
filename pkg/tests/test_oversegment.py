import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tightbox.errors import InvalidPreSegment, PresegNotFound
from tightbox.obb import Obb, boxes_to_obj
from tightbox.oversegment import (PreSegment, compute_masks, load_presegs, oversegment, save_presegs,
                                  segment_masks, winding_number)
from tightbox.tetmesh import save_json

from conftest import fixture
from oracles import two_phase_flood


def brute_masks(mesh, presegs, eps):
    """Oracle: evaluate every plane of every pre-segment at every centroid in a loop."""
    out = np.zeros((mesh.n_tets, len(presegs)), dtype=bool)
    for t, c in enumerate(mesh.tet_centroid):
        for j, p in enumerate(presegs):
            out[t, j] = all(float(np.dot(row[:3], c)) <= row[3] + eps for row in p.planes)
    return out


def test_half_cubes_single_bit(cube):
    halves = [PreSegment.from_box(Obb.axis_aligned([0, 0, 0], [0.5, 1, 1])),
              PreSegment.from_box(Obb.axis_aligned([0.5, 0, 0], [1, 1, 1]))]
    m = compute_masks(cube.mesh, halves)
    assert np.all(m.sum(axis=1) == 1)


def test_overlap_sets_two_bits(cube):
    a = PreSegment.from_box(Obb.axis_aligned([0, 0, 0], [0.6, 1, 1]))
    b = PreSegment.from_box(Obb.axis_aligned([0.4, 0, 0], [1, 1, 1]))
    m = compute_masks(cube.mesh, [a, b])
    x = cube.mesh.tet_centroid[:, 0]
    assert np.array_equal(m.sum(axis=1) == 2, (x >= 0.4) & (x <= 0.6))


def test_missing_arm_has_empty_masks(lshape):
    pres = [PreSegment.from_box(lshape.gt_boxes[0])]
    eps = 1e-7 * lshape.mesh.diagonal
    m = compute_masks(lshape.mesh, pres)
    assert np.array_equal(m, brute_masks(lshape.mesh, pres, eps))
    assert (~m.any(axis=1)).sum() > 0


def test_one_preseg_one_segment(cube):
    pre = PreSegment.from_box(Obb.axis_aligned([-1, -1, -1], [2, 2, 2]))
    assert oversegment(cube.mesh, compute_masks(cube.mesh, [pre])).n_segments == 1


def test_h_shape_over_merged_bars_split():
    fx = fixture("h_shape")
    bars = Obb.axis_aligned([0, 0, 0], [2, 2, 0.5])  # one pre-segment spanning both bars
    pres = [PreSegment.from_box(bars)]
    # only the bars are inside it (the crossbar is masked out by a second, disjoint segment)
    cross = PreSegment.from_box(fx.gt_boxes[2])
    masks = compute_masks(fx.mesh, [pres[0], cross])
    part = oversegment(fx.mesh, masks)
    assert [frozenset(s.tolist()) for s in part.segment_tets] == two_phase_flood(fx.mesh, masks)


def test_cube_ninety_percent():
    fx = fixture("unit_cube")
    pres = [PreSegment.from_box(Obb.axis_aligned([0, 0, 0], [0.9, 1, 1]))]
    masks = compute_masks(fx.mesh, pres)
    part = oversegment(fx.mesh, masks)
    assert [frozenset(s.tolist()) for s in part.segment_tets] == two_phase_flood(fx.mesh, masks)
    assert part.complete


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_random_presegs_match_flood_fill(seed, n):
    rng = np.random.default_rng(seed)
    fx = fixture("l_shape")
    lo, hi = fx.mesh.bounds
    pres = []
    for _ in range(n):
        a, b = rng.uniform(lo, hi), rng.uniform(lo, hi)
        pres.append(PreSegment.from_box(Obb.axis_aligned(np.minimum(a, b) - 0.05, np.maximum(a, b) + 0.05)))
    masks = compute_masks(fx.mesh, pres)
    part = oversegment(fx.mesh, masks)
    assert part.complete
    assert [frozenset(s.tolist()) for s in part.segment_tets] == two_phase_flood(fx.mesh, masks)
    # no cross-mask merging
    for seg in part.segment_tets:
        assert len({masks[t].tobytes() for t in seg}) == 1
    # identity on its own one-hot masks
    again = oversegment(fx.mesh, segment_masks(part))
    assert again.as_sets() == part.as_sets()


def test_plane_validation():
    with pytest.raises(InvalidPreSegment):
        PreSegment.from_planes([[1, 0, 0, 0], [-1, 0, 0, -1]])  # x <= 0 and x >= 1
    with pytest.raises(InvalidPreSegment):
        PreSegment.from_planes([[0, 0, 0, 1]])
    p = PreSegment.from_planes([[2, 0, 0, 2]])  # normalized to x <= 1
    assert np.allclose(p.planes[0], [1, 0, 0, 1])


def test_winding_number_box():
    b = Obb.axis_aligned([0, 0, 0], [1, 1, 1])
    from tightbox.obb import box_surface_triangles
    w = winding_number(box_surface_triangles(b), np.array([[0.5, 0.5, 0.5], [2, 2, 2]]))
    assert w[0] == pytest.approx(1.0, abs=1e-9) and abs(w[1]) < 1e-9


def test_load_presegs_formats(tmp_path, lshape):
    arm = lshape.gt_boxes[1]
    (tmp_path / "arm.obj").write_text(boxes_to_obj([arm]))
    save_json(fixture("unit_cube").mesh, tmp_path / "cube.json")
    (tmp_path / "p.json").write_text(json.dumps({"segments": [
        {"planes": PreSegment.from_box(lshape.gt_boxes[0]).planes.tolist()},
        {"mesh": "arm.obj"}, {"mesh": "cube.json"}]}))
    pres = load_presegs(tmp_path / "p.json")
    assert len(pres) == 3
    m = compute_masks(lshape.mesh, pres)
    plane_masks = compute_masks(lshape.mesh, [PreSegment.from_box(b) for b in lshape.gt_boxes])
    assert np.array_equal(m[:, :2], plane_masks)
    assert np.array_equal(m[:, 2], m[:, 0])  # the cube mesh equals the first part
    with pytest.raises(PresegNotFound):
        load_presegs(tmp_path / "nope.json")
    save_presegs(pres[:1], tmp_path / "round.json")
    assert np.allclose(load_presegs(tmp_path / "round.json")[0].planes, pres[0].planes)
