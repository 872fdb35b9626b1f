import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conelab.mesh2d import (
    DIRICHLET,
    EPS_FIT,
    NEUMANN,
    TriMesh,
    build_mesh,
    export_mesh,
    mesh_quality,
    parse_mesh,
    refine_uniform,
    size_function,
    triangle_areas,
)
from conelab.polydomain import Constraint, DomainError, DomainSpec, Polynomial

X, Y = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
TIP = (((0.0, 0.0), 3.0),)


def square_domain():
    cons = (Constraint(X + 1, ">"), Constraint(X - 1, "<"), Constraint(Y + 1, ">"), Constraint(Y - 1, "<"))
    return DomainSpec(2, (0, 0), np.sqrt(2) * 1.01, cons, dirichlet_selector="variety", neumann_selector="sphere")


def disk_domain(**kw):
    return DomainSpec(2, (0, 0), 1.0, **kw)


def slit_domain(**kw):
    return DomainSpec(2, (0, 0), 1.0, exclusions=((Constraint(Y, "="), Constraint(X, ">=")),), **kw)


def lshape_domain():
    return DomainSpec(2, (0, 0), 1.0, exclusions=((Constraint(X, ">="), Constraint(Y, "<=")),))


@pytest.fixture(scope="module")
def slit_mesh():
    return build_mesh(slit_domain(), 0.05, TIP)


@pytest.fixture(scope="module")
def disk_mesh():
    return build_mesh(disk_domain(), 0.1)


def test_square_structured():
    m = build_mesh(square_domain(), 0.5)
    q = mesh_quality(m)
    assert m.n_triangles == 32
    assert m.flagged == ()
    assert q.conformity
    assert q.min_angle == pytest.approx(45.0)
    assert m.areas().sum() == pytest.approx(4.0)
    assert set(m.boundary_tags) == {DIRICHLET}


def test_disk_size_and_invariants(disk_mesh):
    m = disk_mesh
    # order of 1/h^2; the quadtree clips whole squares, so the count sits above a
    # pure equilateral estimate
    assert 200 <= m.n_triangles <= 1000
    q = mesh_quality(m)
    assert q.conformity and q.min_angle >= 15.0
    bv = m.boundary_vertices()
    r = np.linalg.norm(m.vertices[bv], axis=1)
    assert np.all(np.abs(r - 1) <= EPS_FIT * m.local_size[bv])
    assert set(m.boundary_tags) == {DIRICHLET}


def test_selector_tags():
    d =DomainSpec(2, (0, 0), 1.0, (Constraint(X, "!="),), dirichlet_selector="variety",
                   neumann_selector="sphere", component_seed=(0.5, 0.0))
    m = build_mesh(d, 0.2)
    V = m.vertices
    for (i, j), tag in zip(m.boundary_edges, m.boundary_tags):
        on_line = abs(V[i, 0]) < 1e-9 and abs(V[j, 0]) < 1e-9
        assert tag == (DIRICHLET if on_line else NEUMANN)
    assert np.all(m.centroids()[:, 0] > 0)


def test_slit_graded_tip(slit_mesh):
    m, h = slit_mesh, 0.05
    q = mesh_quality(m)
    assert q.conformity and q.min_angle >= 15.0
    assert m.diameters().min() <= h * h ** (2 / 3)
    # the crack carries two copies of its interior vertices
    bv = m.boundary_vertices()
    on_slit = bv[(np.abs(m.vertices[bv, 1]) < 1e-12) & (m.vertices[bv, 0] > 1e-9)
                 & (m.vertices[bv, 0] < 1 - 1e-9)]
    xs = np.round(m.vertices[on_slit, 0], 12)
    _, counts = np.unique(xs, return_counts=True)
    assert len(counts) > 5 and np.all(counts == 2)


def test_lshape_quality():
    m = build_mesh(lshape_domain(), 0.1, TIP)
    q = mesh_quality(m)
    assert q.conformity and q.min_angle >= 15.0
    assert m.areas().sum() == pytest.approx(0.75 * np.pi, abs=0.02)


def test_boundary_residual(slit_mesh):
    m = slit_mesh
    bv = m.boundary_vertices()
    v = m.vertices[bv]
    res = np.minimum(np.abs(np.linalg.norm(v, axis=1) - 1), np.abs(v[:, 1]))
    assert np.all(res <= EPS_FIT * m.local_size[bv])
    assert m.flagged == ()


def test_area_matches_monte_carlo(slit_mesh):
    rng = np.random.default_rng(7)
    p = rng.uniform(-1, 1, (10**6, 2))
    mc = 4 * slit_domain().contains(p).mean()
    # O(h * perimeter) plus the Monte-Carlo standard error
    assert abs(slit_mesh.areas().sum() - mc) <= 0.05 * 2 * np.pi * 0.05 + 4 * 4 * 0.0017


def test_residual_halves_under_refinement():
    res = []
    for h in (0.2, 0.1):
        m = build_mesh(disk_domain(), h)
        v = m.vertices[m.boundary_vertices()]
        res.append(np.abs((v**2).sum(1) - 1).max())
    # Newton lands at machine precision, so the halving is checked down to that floor
    assert res[1] <= max(res[0] / 2, 1e-14)


def test_radical_grading_exponent(slit_mesh):
    m, h = slit_mesh, 0.05
    d = np.linalg.norm(m.centroids(), axis=1)
    di = m.diameters()
    sel = (di > 4 * h**3) & (di < 0.7 * h)
    slope = np.polyfit(np.log(d[sel]), np.log(di[sel]), 1)[0]
    assert abs(slope - 2 / 3) <= 0.2 * 2 / 3


def test_corrupted_mesh_not_conforming(disk_mesh):
    T = disk_mesh.triangles.copy()
    T[0] = T[0, [0, 2, 1]]
    bad = TriMesh(disk_mesh.vertices, T, disk_mesh.boundary_edges, disk_mesh.boundary_tags)
    assert not mesh_quality(bad).conformity


def test_export_roundtrip(disk_mesh):
    text = export_mesh(disk_mesh)
    assert text.startswith(f"V {disk_mesh.n_vertices}\n")
    back = parse_mesh(text)
    assert np.array_equal(back.vertices, disk_mesh.vertices)
    assert np.array_equal(back.triangles, disk_mesh.triangles)
    assert np.array_equal(back.boundary_edges, disk_mesh.boundary_edges)
    assert back.boundary_tags == disk_mesh.boundary_tags
    assert export_mesh(back) == text


def test_refine_uniform_nested(disk_mesh):
    f = refine_uniform(disk_mesh)
    assert f.n_triangles == 4 * disk_mesh.n_triangles
    assert f.areas().sum() == pytest.approx(disk_mesh.areas().sum())
    assert mesh_quality(f).conformity
    assert np.array_equal(f.vertices[: disk_mesh.n_vertices], disk_mesh.vertices)


def test_errors():
    with pytest.raises(DomainError):
        build_mesh(disk_domain(), 0.0)
    with pytest.raises(DomainError):
        build_mesh(DomainSpec(3, (0, 0, 0), 1.0), 0.1)
    with pytest.raises(DomainError):
        size_function(0.1, [((0, 0), 0.5)], 1.0)


@settings(max_examples=150, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(1.0, 4.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_size_function_radical_law(h, gamma, d1, d2):
    s = size_function(h, [((0.0, 0.0), gamma)], 1.0)
    a, b = sorted([d1, d2])
    sa, sb = s(np.array([a, 0.0])), s(np.array([b, 0.0]))
    floor = h**gamma
    assert floor - 1e-15 <= sa <= sb <= h + 1e-15
    if b > 0 and h * b ** ((gamma - 1) / gamma) > floor:
        assert sb == pytest.approx(h * b ** ((gamma - 1) / gamma))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=3),
       st.floats(0, 2 * np.pi), st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
def test_triangle_area_rigid_invariance(pts, ang, shift):
    V = np.array(pts)
    T = np.array([[0, 1, 2]])
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    a0 = triangle_areas(V, T)[0]
    a1 = triangle_areas(V @ R.T + np.array(shift), T)[0]
    assert a1 == pytest.approx(a0, abs=1e-9)
    assert triangle_areas(V, T[:, [0, 2, 1]])[0] == pytest.approx(-a0, abs=1e-12)
