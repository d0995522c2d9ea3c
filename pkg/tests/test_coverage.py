import numpy as np
import pytest
from hypothesis import given, strategies as st

from tightbox.coverage import (CoverageCache, apply_box_update, centroid_samples, cov, soft_objective,
                               subdivided_samples, tgt)
from tightbox.metrics import build_field
from tightbox.obb import Obb

from conftest import fixture


def scratch_uncovered(mesh, boxes):
    """Oracle: per-tet loop over boxes with direct local-frame containment."""
    unc = 0.0
    for t in range(mesh.n_tets):
        c = mesh.tet_centroid[t]
        if not any(not b.deleted and np.all((b.rotation.T @ c >= b.lo - b.eps) & (b.rotation.T @ c <= b.hi + b.eps))
                   for b in boxes):
            unc += mesh.tet_volume[t]
    return unc


def random_box(rng, lo, hi):
    c = rng.uniform(lo, hi)
    half = rng.uniform(0.05, 0.6, 3)
    a = rng.uniform(0, np.pi)
    R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])
    return Obb.from_center(c, half, R)


def test_cov_examples(cube, lshape):
    m = cube.mesh
    assert cov(m, [Obb.axis_aligned([0, 0, 0], [1, 1, 1])]) == 1.0
    assert cov(m, []) == 0.0
    one_arm = cov(lshape.mesh, [lshape.gt_boxes[0]])
    assert one_arm == pytest.approx(0.5, abs=0.02)
    assert one_arm == pytest.approx(1 - scratch_uncovered(lshape.mesh, [lshape.gt_boxes[0]]) / 2.0, abs=1e-12)


def test_tgt_examples(cube, lshape):
    box = Obb.axis_aligned([0, 0, 0], [1, 1, 1])
    assert tgt(cube.mesh, [box]) == pytest.approx(1.0)
    assert tgt(cube.mesh, [box, box]) == pytest.approx(2.0)
    assert tgt(lshape.mesh, lshape.gt_boxes) == pytest.approx(1.0, abs=1e-6)
    assert tgt(cube.mesh, [Obb.axis_aligned([0, 0, 0], [-1, 1, 1])]) == 0.0


def test_soft_objective_examples(cube):
    box = Obb.axis_aligned([0, 0, 0], [1, 1, 1])
    assert soft_objective(cube.mesh, [box], 100) == pytest.approx(-99)
    assert soft_objective(cube.mesh, [], 100) == 0.0
    assert soft_objective(cube.mesh, [box], 0) == pytest.approx(tgt(cube.mesh, [box]))


def test_subdivided_samples_weights(lshape):
    s = subdivided_samples(lshape.mesh)
    assert len(s) == 4 * lshape.mesh.n_tets
    assert s.weights.sum() == pytest.approx(lshape.mesh.volume)
    assert cov(lshape.mesh, lshape.gt_boxes, subdivide=True) == 1.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_tgt_bounds_sampled_covered_volume(seed, n):
    # the volume form of Tgt >= Cov: sum of box volumes >= vol(S inside the union)
    rng = np.random.default_rng(seed)
    m = fixture("l_shape").mesh
    boxes = [random_box(rng, *m.bounds) for _ in range(n)]
    f = build_field(m, boxes, 48, bounds=m.bounds)
    covered = f.volume(f.in_shape & f.in_union) / m.volume
    assert tgt(m, boxes) >= covered - 0.02
    assert cov(m, boxes) == pytest.approx(1 - scratch_uncovered(m, boxes) / m.volume, abs=1e-12)


def test_centroid_cov_can_exceed_tgt(cube):
    # a box spanning only the centroid hull covers every centroid with less volume than S
    c = cube.mesh.tet_centroid
    tight = Obb.axis_aligned(c.min(axis=0), c.max(axis=0))
    assert cov(cube.mesh, [tight]) == 1.0
    assert tgt(cube.mesh, [tight]) < 1.0


def test_cache_matches_scratch_and_updates(lshape):
    m = lshape.mesh
    rng = np.random.default_rng(1)
    boxes = [random_box(rng, *m.bounds) for _ in range(4)]
    cache = CoverageCache(centroid_samples(m), boxes)
    assert cache.coverage == pytest.approx(cov(m, boxes), abs=1e-12)
    # no-op update
    before = cache.cover_count.copy()
    apply_box_update(cache, 0, boxes[0], boxes[0])
    assert np.array_equal(before, cache.cover_count)
    # grow rx of box 1 by one unit
    grown = boxes[1].face_step(3, 0.05)
    apply_box_update(cache, 1, boxes[1], grown)
    boxes[1] = grown
    assert cache.coverage == pytest.approx(cov(m, boxes), abs=1e-12)
    fresh = CoverageCache(centroid_samples(m), boxes)
    assert np.array_equal(fresh.cover_count, cache.cover_count)


def test_delete_box_uncovers_solely_covered(lshape):
    m = lshape.mesh
    boxes = list(lshape.gt_boxes) + [Obb.axis_aligned([0.5, 0, 0], [1.5, 1, 1])]
    cache = CoverageCache(centroid_samples(m), boxes)
    sole = (cache.member[0]) & (cache.cover_count == 1)
    expected = float(m.tet_volume[sole].sum())
    before = cache.uncovered_volume
    dead = Obb(boxes[0].rotation, boxes[0].hi + 1, boxes[0].lo)
    apply_box_update(cache, 0, boxes[0], dead)
    assert cache.uncovered_volume - before == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_growth_monotone(seed):
    rng = np.random.default_rng(seed)
    m = fixture("l_shape").mesh
    boxes = [random_box(rng, *m.bounds) for _ in range(3)]
    k, coord = int(rng.integers(3)), int(rng.integers(6))
    grown = list(boxes)
    grown[k] = boxes[k].face_step(coord, 0.05 if coord >= 3 else -0.05)
    assert cov(m, grown) >= cov(m, boxes)
    assert tgt(m, grown) > tgt(m, boxes)


def test_feasibility_predicate(lshape):
    m = lshape.mesh
    cache = CoverageCache(centroid_samples(m), lshape.gt_boxes)
    assert cache.uncovered_volume == 0 and cache.coverage == 1.0
    cache = CoverageCache(centroid_samples(m), lshape.gt_boxes[:1])
    assert cache.uncovered_volume > 0 and cache.coverage < 1.0
