import numpy as np
import pytest

from tightbox.errors import InvalidSpec
from tightbox.fixtures import CATALOG, MODES, CompoundSpec, Part, generate, write_fixture
from tightbox.oversegment import compute_masks, load_presegs
from tightbox.tetmesh import load_tetmesh

from conftest import fixture

ANALYTIC_VOLUME = {"unit_cube": 1.0, "l_shape": 2.0, "plus_shape": 3.0, "h_shape": 1.25,
                   "table": 1.28, "rotated_leg_table": 1.28}


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_volume_and_labels(name):
    fx = fixture(name)
    assert fx.mesh.volume == pytest.approx(ANALYTIC_VOLUME[name], rel=1e-9)
    assert fx.labels.complete
    assert fx.labels.n_segments == len(fx.spec.parts)
    assert not fx.overlap
    for k, part in enumerate(fx.spec.parts):
        assert fx.mesh.tet_volume[fx.labels.segment_tets[k]].sum() == pytest.approx(part.volume, rel=1e-9)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_clean_presegs_one_bit_per_tet(name):
    fx = fixture(name)
    m = compute_masks(fx.mesh, fx.presegs["clean"])
    assert np.all(m.sum(axis=1) == 1)


@pytest.mark.parametrize("name", ["l_shape", "plus_shape", "table"])
def test_corruption_modes(name):
    fx = fixture(name)
    over = compute_masks(fx.mesh, fx.presegs["over_merged"])
    i, j = fx.spec.merge_pair
    # tets of both merged parts share one mask column
    shared = over[fx.labels.segment_tets[i]].any(axis=0) & over[fx.labels.segment_tets[j]].any(axis=0)
    assert shared.any()
    under = compute_masks(fx.mesh, fx.presegs["under_covered"])
    assert (~under.any(axis=1)).any()


def test_conformity_flags():
    assert fixture("table").conforming
    assert not fixture("rotated_leg_table").conforming


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        generate(CompoundSpec([]))
    with pytest.raises(InvalidSpec):
        generate(CompoundSpec([Part([0, 0, 0], [0.5, 0.5, 0.5])], tets_per_unit=0))
    with pytest.raises(InvalidSpec):
        generate(CompoundSpec([Part([0, 0, 0], [0.5, -1, 0.5])]))


def test_overlap_reported():
    fx = generate(CompoundSpec([Part.from_bounds([0, 0, 0], [1, 1, 1]),
                                Part.from_bounds([0.5, 0, 0], [1.5, 1, 1])], 2))
    assert fx.overlap
    assert fx.mesh.volume == pytest.approx(2.0)


@pytest.mark.parametrize("node_ele", [False, True])
def test_write_fixture_round_trip(tmp_path, node_ele):
    fx = fixture("l_shape")
    d = write_fixture(fx, tmp_path, "under_covered", node_ele)
    m = load_tetmesh(d / ("mesh.node" if node_ele else "mesh.json"))
    assert np.array_equal(m.tets, fx.mesh.tets)
    assert len(load_presegs(d / "presegs.json")) == len(fx.presegs["under_covered"])
    assert set(MODES) == set(fx.presegs)
