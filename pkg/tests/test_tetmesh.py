import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tightbox.errors import DegenerateMesh, EmptyMesh, ParseError
from tightbox.tetmesh import (Partition, TetMesh, connected_components, load_tetmesh, point_in_mesh,
                              points_in_mesh, save_json, save_node_ele)

from conftest import CUBE5_TETS, CUBE5_VERTS, fixture


def brute_force_inside(mesh, pts, tol=1e-9):
    """Oracle: barycentric test of every point against every tet."""
    out = np.zeros(len(pts), dtype=bool)
    for t in mesh.tets:
        a, b, c, d = mesh.vertices[t]
        T = np.column_stack([b - a, c - a, d - a])
        lam = np.linalg.solve(T, (pts - a).T).T
        out |= (lam >= -tol).all(axis=1) & (lam.sum(axis=1) <= 1 + tol)
    return out


def flood_fill(mesh, subset):
    """Oracle: explicit-stack flood fill over the adjacency lists."""
    subset = set(int(t) for t in subset)
    seen, comps = set(), []
    for s in sorted(subset):
        if s in seen:
            continue
        comp, stack = [], [s]
        seen.add(s)
        while stack:
            t = stack.pop()
            comp.append(t)
            for n in mesh.face_adjacency[t]:
                if n >= 0 and n in subset and n not in seen:
                    seen.add(int(n))
                    stack.append(int(n))
        comps.append(frozenset(comp))
    return set(comps)


def test_cube5_volume(cube5):
    assert cube5.volume == pytest.approx(1.0, abs=1e-12)
    assert np.all(cube5.tet_volume > 0)


def test_negative_tets_reoriented():
    flipped = CUBE5_TETS.copy()
    flipped[:, [0, 1]] = flipped[:, [1, 0]]
    m = TetMesh(CUBE5_VERTS, flipped)
    assert np.all(m.tet_volume > 0)
    assert m.volume == pytest.approx(1.0)


def test_out_of_range_index_is_parse_error():
    bad = CUBE5_TETS.copy()
    bad[0, 0] = 999
    with pytest.raises(ParseError):
        TetMesh(CUBE5_VERTS, bad)


def test_degenerate_and_empty():
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    with pytest.raises(DegenerateMesh):
        TetMesh(flat, [[0, 1, 2, 3]])
    with pytest.raises(EmptyMesh):
        TetMesh(CUBE5_VERTS, np.zeros((0, 4), dtype=int))


def test_adjacency_symmetric():
    m = fixture("plus_shape").mesh
    for t, row in enumerate(m.face_adjacency):
        for n in row[row >= 0]:
            assert t in m.face_adjacency[n]


def test_l_shape_volume():
    assert fixture("l_shape").mesh.volume == pytest.approx(2.0, rel=1e-9)


def test_point_in_mesh_examples(cube5):
    assert point_in_mesh(cube5, [0.5, 0.5, 0.5])
    assert not point_in_mesh(cube5, [1.5, 0, 0])


@pytest.mark.parametrize("name", ["l_shape", "rotated_leg_table"])
def test_points_in_mesh_matches_brute_force(name):
    m = fixture(name).mesh
    lo, hi = m.bounds
    pts = np.random.default_rng(1).uniform(lo - 0.1, hi + 0.1, size=(2000, 3))
    assert np.array_equal(points_in_mesh(m, pts), brute_force_inside(m, pts))


def test_l_shape_grid_matches_brute_force():
    m = fixture("l_shape").mesh
    axes = [np.linspace(a, b, 10) for a, b in zip(*m.bounds)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    assert np.array_equal(points_in_mesh(m, pts), brute_force_inside(m, pts))


def test_connected_components_examples():
    cube = fixture("unit_cube").mesh
    assert len(connected_components(cube, range(cube.n_tets))) == 1
    plus = fixture("plus_shape")
    m = plus.mesh
    # remove the centre cross-over region of the long bar
    c = m.tet_centroid
    centre = (c[:, 0] > 0) & (c[:, 0] < 0.5) & (c[:, 1] > 0.75) & (c[:, 1] < 1.25)
    comps = connected_components(m, np.nonzero(~centre)[0])
    assert len(comps) == 4
    assert {frozenset(x.tolist()) for x in comps} == flood_fill(m, np.nonzero(~centre)[0])


def test_two_disjoint_cubes():
    v2 = np.vstack([CUBE5_VERTS, CUBE5_VERTS + [3, 0, 0]])
    m = TetMesh(v2, np.vstack([CUBE5_TETS, CUBE5_TETS + 8]))
    assert len(connected_components(m, range(10))) == 2


@given(st.lists(st.integers(0, 639), min_size=1, max_size=200, unique=True), st.randoms())
def test_components_order_independent(subset, rnd):
    m = fixture("l_shape").mesh
    shuffled = list(subset)
    rnd.shuffle(shuffled)
    a = {frozenset(c.tolist()) for c in connected_components(m, subset)}
    b = {frozenset(c.tolist()) for c in connected_components(m, shuffled)}
    assert a == b == flood_fill(m, subset)
    assert set().union(*a) == set(subset)
    # idempotent: each component is a single component of itself
    for comp in a:
        assert len(connected_components(m, sorted(comp))) == 1


def test_json_and_node_ele_round_trip(tmp_path):
    m = fixture("table").mesh
    save_json(m, tmp_path / "m.json")
    save_node_ele(m, tmp_path / "m", base=1)
    a = load_tetmesh(tmp_path / "m.json")
    b = load_tetmesh(tmp_path / "m.node")
    for x in (a, b):
        assert np.array_equal(x.tets, m.tets)
        assert np.allclose(x.vertices, m.vertices, atol=0)


def test_node_ele_zero_based(tmp_path):
    m = fixture("unit_cube").mesh
    save_node_ele(m, tmp_path / "m", base=0)
    assert np.array_equal(load_tetmesh(tmp_path / "m.ele").tets, m.tets)


def test_malformed_files(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParseError):
        load_tetmesh(tmp_path / "bad.json")
    (tmp_path / "oob.json").write_text(json.dumps({"vertices": CUBE5_VERTS.tolist(),
                                                   "tets": [[0, 1, 2, 999]]}))
    with pytest.raises(ParseError):
        load_tetmesh(tmp_path / "oob.json")
    with pytest.raises(ParseError):
        load_tetmesh(tmp_path / "missing.node")


def test_partition_consistency():
    p = Partition(np.array([2, 0, 0, 1, 2]))
    assert p.n_segments == 3
    assert [s.tolist() for s in p.segment_tets] == [[1, 2], [3], [0, 4]]
    assert p.canonical().labels.tolist() == [0, 1, 1, 2, 0]
    q = Partition.from_segments([[0], [1, 2]], 4)
    assert not q.complete
