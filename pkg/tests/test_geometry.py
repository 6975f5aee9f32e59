import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import shapely
from shapely.geometry import Point, Polygon

from fracnorm.geometry import (
    AffineMap,
    GeometryError,
    Mesh,
    apply_map,
    distance_to_boundary,
    domain_metrics,
    interval,
    is_convex,
    ltriangle,
    map_bound_constants,
    mesh_from_json,
    mesh_from_spec,
    mesh_from_text,
    refine,
    spectral_norm,
    square,
)


def l_shape() -> Mesh:
    """Unit square with the upper right quarter removed."""
    base = square(2)
    centroids = base.vertices[base.elements].mean(axis=1)
    keep = base.elements[~((centroids[:, 0] > 0.5) & (centroids[:, 1] > 0.5))]
    used = np.unique(keep)
    index = -np.ones(base.n_vertices, dtype=int)
    index[used] = np.arange(len(used))
    return Mesh(base.vertices[used], index[keep])


def boundary_polygon(mesh: Mesh) -> Polygon:
    bf = mesh.boundary_facets
    nxt = {int(a): int(b) for a, b in bf}
    start = int(bf[0, 0])
    ring, v = [start], nxt[start]
    while v != start:
        ring.append(v)
        v = nxt[v]
    return Polygon(mesh.vertices[ring])


# -- spectral norm -----------------------------------------------------------------


@pytest.mark.parametrize(
    "B, expected",
    [
        (np.eye(2), 1.0),
        (np.diag([2.0, 0.5]), 2.0),
        ([[1.0, 1.0], [0.0, 1.0]], (1 + math.sqrt(5)) / 2),
        ([[3.0]], 3.0),
    ],
)
def test_spectral_norm_examples(B, expected):
    assert spectral_norm(B) == pytest.approx(expected, rel=1e-14)


def test_spectral_norm_matches_power_iteration(rng):
    for _ in range(20):
        B = rng.standard_normal((2, 2))
        x = rng.standard_normal(2)
        for _ in range(500):
            x = B.T @ (B @ x)
            x /= np.linalg.norm(x)
        assert spectral_norm(B) == pytest.approx(np.linalg.norm(B @ x), rel=1e-10)


def test_spectral_norm_singular():
    with pytest.raises(GeometryError, match="non-invertible map"):
        spectral_norm([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(GeometryError, match="non-invertible map"):
        AffineMap([[0.0]])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=4, max_size=4))
def test_condition_number_at_least_one(entries):
    B = np.array(entries).reshape(2, 2)
    if abs(np.linalg.det(B)) < 1e-3:
        return
    F = AffineMap(B)
    assert F.norm_B * F.norm_Binv >= 1.0 - 1e-12
    assert F.norm_B == pytest.approx(np.linalg.norm(B, 2), rel=1e-12)
    assert F.norm_Binv == pytest.approx(np.linalg.norm(np.linalg.inv(B), 2), rel=1e-10)


@pytest.mark.parametrize(
    "F, conformal",
    [
        (AffineMap.rotation(0.7), True),
        (AffineMap.scaling(3.0, 2), True),
        (AffineMap.rotation(1.1).compose(AffineMap.scaling(0.2, 2)), True),
        (AffineMap.shear(0.5), False),
        (AffineMap.diagonal(2.0, 0.5), False),
    ],
)
def test_condition_one_iff_conformal(F, conformal):
    assert F.is_conformal(1e-12) == conformal


# -- meshes ----------------------------------------------------------------------


@pytest.mark.parametrize("mesh", [interval(5), square(3), ltriangle(3), refine(square(1))])
def test_generated_meshes_are_valid(mesh):
    assert np.all(mesh.measures > 0)
    facets, _, _, inverse, counts = mesh._facet_table
    assert len(mesh.boundary_facets) == int(np.sum(counts == 1))


def test_boundary_facets_square():
    m = square(3)
    assert len(m.boundary_facets) == 12
    assert len(m.interior_vertices) == 4


@pytest.mark.parametrize(
    "verts, elems, msg",
    [
        ([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]], "zero measure"),
        ([[0.0], [1.0], [2.0], [3.0]], [[0, 1], [2, 3]], "not connected"),
        ([[0.0], [1.0], [0.5]], [[0, 1], [0, 2]], "overlapping"),
        ([[0.0], [1.0]], np.zeros((0, 2), dtype=int), "empty mesh"),
    ],
)
def test_invalid_meshes(verts, elems, msg):
    with pytest.raises(GeometryError, match=msg):
        Mesh(np.array(verts, dtype=float), np.array(elems))


def test_hanging_vertex_rejected():
    verts = [[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0]]
    elems = [[0, 4, 2], [4, 1, 2], [1, 3, 2]]
    Mesh(verts, elems)  # conforming
    with pytest.raises(GeometryError):
        Mesh(verts, [[0, 1, 2], [1, 3, 2], [0, 4, 2]])


def test_mesh_text_and_json_roundtrip():
    m = ltriangle(2)
    for back in (mesh_from_text(m.to_text()), mesh_from_json(m.to_json())):
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.elements, m.elements)
        assert back.mesh_hash == m.mesh_hash


def test_mesh_from_spec():
    assert mesh_from_spec("square(2)").n_vertices == 9
    assert mesh_from_spec("interval(4, 1)").n_elements == 8
    with pytest.raises(GeometryError):
        mesh_from_spec("sphere(3)")
    with pytest.raises(FileNotFoundError):
        mesh_from_spec("/nonexistent/mesh.txt")


# -- metrics -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "mesh, D, d",
    [
        (interval(4), 1.0, 1.0),
        (square(3), math.sqrt(2), 1.0),
        (ltriangle(3), math.sqrt(2), 2 - math.sqrt(2)),
    ],
)
def test_domain_metrics_examples(mesh, D, d):
    m = domain_metrics(mesh)
    assert m.diameter == pytest.approx(D, rel=1e-12)
    assert m.inner_diameter == pytest.approx(d, rel=1e-12)
    assert m.shape_ratio == pytest.approx(D / d, rel=1e-12)
    assert not m.approximate


def test_metrics_match_shapely():
    for mesh in (square(2), ltriangle(3), apply_map(square(2), AffineMap.shear(0.7)), l_shape()):
        poly = boundary_polygon(mesh)
        assert mesh.volume == pytest.approx(poly.area, rel=1e-12)
        m = domain_metrics(mesh)
        assert m.area == pytest.approx(poly.area, rel=1e-12)


@pytest.mark.parametrize(
    "mesh",
    [square(2), ltriangle(2), apply_map(ltriangle(2), AffineMap.shear(1.3)),
     apply_map(square(2), AffineMap.diagonal(3.0, 0.5))],
)
def test_chebyshev_radius_against_grid(mesh):
    m = domain_metrics(mesh)
    poly = boundary_polygon(mesh)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    n = 200
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = shapely.contains_xy(poly, pts[:, 0], pts[:, 1])
    best = shapely.distance(poly.exterior, shapely.points(pts[inside])).max()
    cell = float(np.max((hi - lo) / (n - 1)))
    assert abs(m.inner_diameter / 2 - best) <= cell


def test_nonconvex_metrics_flagged():
    mesh = l_shape()
    assert not is_convex(mesh)
    m = domain_metrics(mesh)
    assert m.approximate
    # the largest disc inside the L-shape touches the reentrant corner; its radius lies in [1/4, 0.3]
    assert 0.25 - 1e-3 <= m.inner_diameter / 2 <= 0.3


def test_scaling_metrics_exact():
    ref = domain_metrics(ltriangle(2))
    for h in (0.125, 3.0):
        m = domain_metrics(apply_map(ltriangle(2), AffineMap.scaling(h, 2, x0=[1.0, 2.0])))
        assert m.diameter == pytest.approx(h * ref.diameter, rel=1e-12)
        assert m.inner_diameter == pytest.approx(h * ref.inner_diameter, rel=1e-12)
        assert m.shape_ratio == pytest.approx(ref.shape_ratio, rel=1e-12)


# -- maps ---------------------------------------------------------------------------


def test_apply_map_examples():
    m = square(2)
    assert np.array_equal(apply_map(m, AffineMap.identity(2)).vertices, m.vertices)
    doubled = apply_map(interval(4), AffineMap.scaling(2.0, 1))
    assert doubled.volume == pytest.approx(2.0)
    assert np.allclose(doubled.measures, 0.5)
    sheared = apply_map(m, AffineMap.shear(1.0))
    assert sheared.volume == pytest.approx(1.0, rel=1e-14)
    assert domain_metrics(sheared).diameter > domain_metrics(m).diameter


def test_apply_map_repairs_orientation():
    m = apply_map(square(2), AffineMap.diagonal(-1.0, 1.0))
    assert np.all(m.measures > 0)
    r = apply_map(interval(3), AffineMap([[-2.0]]))
    assert np.all(r.measures > 0)


def test_map_bound_constants_examples():
    ref = domain_metrics(square(2))
    assert map_bound_constants(AffineMap.identity(2), ref, ref).norm_B <= ref.shape_ratio
    h = 0.25
    mb = map_bound_constants(AffineMap.scaling(h, 2), ref, domain_metrics(apply_map(square(2), AffineMap.scaling(h, 2))))
    assert mb.norm_B == pytest.approx(h)
    assert mb.norm_B_bound == pytest.approx(h * math.sqrt(2))
    sh = domain_metrics(apply_map(square(2), AffineMap.shear(1.0)))
    mb = map_bound_constants(AffineMap.shear(1.0), ref, sh)
    assert mb.abs_det == pytest.approx(1.0)
    assert mb.abs_det <= sh.diameter**2 / ref.inner_diameter**2


def test_map_bound_constants_detects_inconsistent_metrics():
    ref = domain_metrics(square(2))
    img = domain_metrics(apply_map(square(2), AffineMap.scaling(2.0, 2)))
    with pytest.raises(GeometryError, match="geometry inconsistency"):
        map_bound_constants(AffineMap.scaling(5.0, 2), ref, img)


@pytest.mark.parametrize(
    "mesh, x, expected",
    [(square(2), (0.5, 0.5), 0.5), (interval(4), (0.25,), 0.25), (square(2), (0.1, 0.3), 0.1)],
)
def test_distance_to_boundary_examples(mesh, x, expected):
    assert distance_to_boundary(mesh, x) == pytest.approx(expected, abs=1e-15)


def test_distance_to_boundary_outside():
    with pytest.raises(GeometryError):
        distance_to_boundary(square(2), (1.5, 0.5))


def test_distance_matches_shapely(rng):
    mesh = l_shape()
    poly = boundary_polygon(mesh)
    pts = rng.uniform(0, 1, size=(200, 2))
    pts = pts[[poly.contains(Point(p)) for p in pts]]
    ours = mesh.boundary_distance(pts)
    ref = np.array([poly.exterior.distance(Point(p)) for p in pts])
    assert np.allclose(ours, ref, atol=1e-14)
