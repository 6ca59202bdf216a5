import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdefem.errors import ConfigurationError, LocationError
from spdefem.geometry import (PointLocator, barycentric, dodecagon_hierarchy,
                              dodecagon_mesh, dump_mesh, edge_lengths,
                              grid_interpolation, locate, mesh_edges, refine,
                              sample_points_in_mesh, signed_areas,
                              triangle_areas, unit_square_grid)

DODECAGON_AREA = 3.0 * 0.5 ** 2   # (n/2) r^2 sin(2 pi / n) for n = 12


def brute_force_locate(mesh, p):
    for t in range(mesh.n_triangles):
        lam = barycentric(mesh, t, p)
        if np.all(lam >= -1e-12):
            return t, lam
    raise AssertionError(f"{p} not in mesh")


@pytest.mark.parametrize("level,nodes,tris,spacing", [
    (0, 4, 2, 1.0),
    (3, 81, 128, 0.125),
])
def test_unit_square_grid_counts(level, nodes, tris, spacing):
    g = unit_square_grid(level)
    assert g.mesh.n_nodes == nodes
    assert g.mesh.n_triangles == tris
    assert g.spacing == spacing
    assert np.isclose(g.mesh.h_max, spacing * np.sqrt(2.0))


def test_unit_square_grid_reference_level():
    g = unit_square_grid(7)
    assert g.mesh.n_nodes == 16641
    assert g.spacing == 2.0 ** -7


@pytest.mark.parametrize("level", [-1, 13])
def test_level_out_of_range(level):
    with pytest.raises(ConfigurationError):
        unit_square_grid(level)
    with pytest.raises(ConfigurationError):
        dodecagon_mesh(level)


def test_dodecagon_fan():
    m = dodecagon_mesh(0)
    assert m.n_nodes == 13
    assert m.n_triangles == 12
    assert np.isclose(m.h_max, 0.5)
    assert np.isclose(triangle_areas(m).sum(), DODECAGON_AREA, atol=1e-12)


def test_dodecagon_level1_counts_by_edge_enumeration():
    m0 = dodecagon_mesh(0)
    # brute-force unique edge count: each edge contributes one midpoint node
    edges = set()
    for a, b, c in m0.triangles:
        for e in ((a, b), (b, c), (c, a)):
            edges.add(tuple(sorted(map(int, e))))
    m1 = dodecagon_mesh(1)
    assert m1.n_nodes == m0.n_nodes + len(edges) == 37
    assert m1.n_triangles == 48


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_dodecagon_area_and_h(level):
    m = dodecagon_mesh(level)
    assert abs(triangle_areas(m).sum() - DODECAGON_AREA) < 1e-12
    assert np.isclose(m.h_max, 0.5 * 2.0 ** -level)


def test_refine_single_triangle():
    from spdefem.geometry import _build_mesh
    m = _build_mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                    np.array([[0, 1, 2]]), 0, "custom")
    r = refine(m)
    assert r.n_nodes == 6
    assert r.n_triangles == 4
    assert np.isclose(r.h_max, m.h_max / 2.0)
    assert np.allclose(triangle_areas(r).sum(), 0.5)


def test_refine_matches_direct_construction():
    r = refine(dodecagon_mesh(0))
    d = dodecagon_mesh(1)
    assert np.array_equal(r.triangles, d.triangles)
    assert np.allclose(r.nodes, d.nodes)


@pytest.mark.parametrize("family", ["dodecagon", "square"])
def test_nesting(family):
    for level in range(3):
        if family == "dodecagon":
            coarse, fine = dodecagon_mesh(level), dodecagon_mesh(level + 1)
            # refinement keeps parent nodes as a prefix
            assert np.allclose(fine.nodes[:coarse.n_nodes], coarse.nodes, atol=1e-12)
        else:
            coarse = unit_square_grid(level).mesh
            fine = unit_square_grid(level + 1).mesh
            fine_set = {tuple(p) for p in fine.nodes}
            assert all(tuple(p) in fine_set for p in coarse.nodes)


@pytest.mark.parametrize("mesh", [dodecagon_mesh(2), unit_square_grid(2).mesh,
                                  refine(refine(dodecagon_mesh(1)))])
def test_orientation_positive(mesh):
    assert signed_areas(mesh.nodes, mesh.triangles).min() > 0.0


@pytest.mark.parametrize("make", [lambda: dodecagon_mesh(2), lambda: unit_square_grid(3).mesh])
def test_conformity(make):
    mesh = make()
    _, counts = mesh_edges(mesh.triangles)
    assert set(np.unique(counts)) <= {1, 2}
    # boundary nodes are exactly the nodes of the single-count edges
    edges, counts = mesh_edges(mesh.triangles)
    expect = np.unique(edges[counts == 1])
    assert np.array_equal(np.sort(mesh.boundary_nodes), expect)


def test_dodecagon_boundary_nodes_geometric():
    mesh = dodecagon_mesh(3)
    # a point is on the boundary iff it lies on one of the 12 polygon edges
    angles = 2.0 * np.pi * (np.arange(12) + 0.5) / 12.0
    normals = np.column_stack([np.cos(angles), np.sin(angles)])
    apothem = 0.5 * np.cos(np.pi / 12.0)
    proj = (mesh.nodes - 0.5) @ normals.T
    on_boundary = np.abs(proj.max(axis=1) - apothem) < 1e-12
    assert np.array_equal(np.sort(mesh.boundary_nodes), np.nonzero(on_boundary)[0])


@pytest.mark.parametrize("family", ["dodecagon", "square"])
def test_quasiuniformity(family):
    for level in range(5):
        mesh = dodecagon_mesh(level) if family == "dodecagon" else unit_square_grid(level).mesh
        lengths = edge_lengths(mesh)
        assert lengths.max() / lengths.min() <= 4.0


def test_locate_grid_example():
    g = unit_square_grid(1)
    tri, bary = locate(g, (0.3, 0.1))
    assert tri == 0
    assert np.allclose(bary, [0.2, 0.6, 0.2])
    bt, bl = brute_force_locate(g.mesh, np.array([0.3, 0.1]))
    assert bt == tri
    assert np.allclose(np.sort(bl), np.sort(bary))


def test_locate_vertex_case():
    g = unit_square_grid(2)
    node = g.mesh.nodes[7]
    tri, bary = locate(g, node)
    assert np.isclose(bary.max(), 1.0)
    assert np.isclose(bary.sum(), 1.0)
    rec = bary @ g.mesh.nodes[g.mesh.triangles[tri]]
    assert np.allclose(rec, node, atol=1e-12)


def test_locate_outside_raises():
    g = unit_square_grid(2)
    with pytest.raises(LocationError):
        locate(g, (1.5, 0.5))
    with pytest.raises(LocationError):
        locate(dodecagon_mesh(1), (0.999, 0.999))   # unit-square corner, outside dodecagon


def test_locate_mesh_matches_brute_force():
    mesh = dodecagon_mesh(2)
    rng = np.random.default_rng(3)
    pts, _, _ = sample_points_in_mesh(mesh, 50, rng)
    locator = PointLocator(mesh)
    for p in pts:
        t, lam = locator.locate(p)
        bt, _ = brute_force_locate(mesh, p)
        assert t == bt
        assert np.all(lam >= -1e-12)
        assert np.isclose(lam.sum(), 1.0)
        rec = lam @ mesh.nodes[mesh.triangles[t]]
        assert np.allclose(rec, p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 5))
def test_partition_of_unity_on_grid(x, y, level):
    g = unit_square_grid(level)
    tri, _, bary = grid_interpolation(g, np.array([[x, y]]))
    assert np.isclose(bary.sum(), 1.0, atol=1e-12)
    assert np.all(bary >= -1e-12)
    rec = bary[0] @ g.mesh.nodes[g.mesh.triangles[tri[0]]]
    assert np.allclose(rec, [x, y], atol=1e-12)


def test_grid_locate_tie_prefers_lower_triangle():
    g = unit_square_grid(1)
    tri, _ = locate(g, (0.25, 0.25))   # on the cell diagonal
    assert tri % 2 == 0


def test_dump_mesh(tmp_path):
    mesh = dodecagon_mesh(1)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"
    assert len(lines) == 1 + mesh.n_nodes + mesh.n_triangles
    flags = np.array([int(l.split()[2]) for l in lines[1:1 + mesh.n_nodes]])
    assert np.array_equal(np.nonzero(flags)[0], np.sort(mesh.boundary_nodes))


def test_hierarchy_links():
    meshes = dodecagon_hierarchy(3)
    for coarse, fine in zip(meshes, meshes[1:]):
        assert fine.parent is coarse
        assert fine.midpoint_edges.shape[0] == fine.n_nodes - coarse.n_nodes
