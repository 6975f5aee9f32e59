import json
import math

import numpy as np
import pytest
from scipy import integrate

from fracnorm.fespace import FormError, P1Function
from fracnorm.geometry import AffineMap, Mesh, apply_map, domain_metrics, interval, ltriangle, refine, square
from fracnorm.norms import (
    EquivalenceConstants,
    NormSuite,
    check_pf_interp,
    check_pf_ss,
    estimate_equivalence_constants,
    pencil_extremes,
    pf_ss_constant,
    suite_for,
    tilde_form,
    tilde_ss_norm,
    weighted_mass_exact,
    weighted_mass_form,
    weighted_mass_graded,
)
from fracnorm.slobodeckij import ParameterError
from fracnorm.spectral import SpectralError


def l_shape() -> Mesh:
    base = square(2)
    centroids = base.vertices[base.elements].mean(axis=1)
    keep = base.elements[~((centroids[:, 0] > 0.5) & (centroids[:, 1] > 0.5))]
    used = np.unique(keep)
    index = -np.ones(base.n_vertices, dtype=int)
    index[used] = np.arange(len(used))
    return Mesh(base.vertices[used], index[keep])


# -- weighted mass ---------------------------------------------------------------


@pytest.mark.parametrize("s", [0.1, 0.3, 0.45])
def test_weighted_mass_constant_1d(s):
    """``int_0^1 min(x, 1-x)^(-2s) dx = 2 (1/2)^(1-2s) / (1-2s)``."""
    mesh = interval(5)
    W = weighted_mass_exact(mesh, s)
    one = np.ones(mesh.n_vertices)
    assert one @ W @ one == pytest.approx(2 * 0.5 ** (1 - 2 * s) / (1 - 2 * s), rel=1e-12)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75, 0.9])
def test_weighted_mass_hat_1d(s):
    """Central hat of ``interval(2)``: ``2 int_0^(1/2) (2x)^2 x^(-2s) dx``."""
    W = weighted_mass_form(interval(2), s)
    hat = np.array([0.0, 1.0, 0.0])
    assert W.value(hat) == pytest.approx(8 * 0.5 ** (3 - 2 * s) / (3 - 2 * s), rel=1e-12)


@pytest.mark.parametrize("s", [0.2, 0.4])
def test_weighted_mass_unit_square_total(s):
    """Level sets of the distance are squares of side ``1 - 2t``."""
    a = 1 - 2 * s
    expected = 4 * (0.5**a / a - 2 * 0.5 ** (a + 1) / (a + 1))
    for mesh in (square(1), square(3)):
        W = weighted_mass_exact(mesh, s)
        one = np.ones(mesh.n_vertices)
        assert one @ W @ one == pytest.approx(expected, rel=1e-12)


def test_weighted_mass_against_dblquad():
    mesh = square(2)
    s = 0.7
    c = int(np.argmin(np.linalg.norm(mesh.vertices - 0.5, axis=1)))
    total = 0.0
    for e in np.flatnonzero((mesh.elements == c).any(axis=1)):
        P = mesh.vertices[mesh.elements[e]]
        j = int(np.flatnonzero(mesh.elements[e] == c)[0])
        T = np.column_stack([P, np.ones(3)])
        coef = np.linalg.solve(T, np.eye(3)[j])

        def f(y, x):
            phi = coef[0] * x + coef[1] * y + coef[2]
            d = min(x, 1 - x, y, 1 - y)
            return phi * phi * d ** (-2 * s)

        xs = np.sort(P[:, 0])
        # split at the x-coordinates of the vertices and integrate between the edges
        for x0, x1 in zip(xs[:-1], xs[1:]):
            if x1 - x0 < 1e-14:
                continue

            def edges(x, P=P):
                ys = []
                for a, b in ((0, 1), (1, 2), (2, 0)):
                    (xa, ya), (xb, yb) = P[a], P[b]
                    if min(xa, xb) - 1e-14 <= x <= max(xa, xb) + 1e-14 and abs(xb - xa) > 1e-14:
                        ys.append(ya + (x - xa) * (yb - ya) / (xb - xa))
                return min(ys), max(ys)

            val, _ = integrate.dblquad(
                f, x0, x1, lambda x: edges(x)[0], lambda x: edges(x)[1], epsabs=0, epsrel=1e-11
            )
            total += val
    W = weighted_mass_form(mesh, s)
    assert W.matrix[0, 0] == pytest.approx(total, rel=1e-8)
    assert list(W.dofs) == [c]


@pytest.mark.parametrize(
    "mesh, s",
    [(square(2), 0.3), (interval(6), 0.3), (interval(6), 0.8), (square(3), 0.6),
     (apply_map(ltriangle(2), AffineMap.shear(1.3)), 0.4)],
)
def test_exact_and_graded_agree(mesh, s):
    dofs = mesh.interior_vertices if s >= 0.5 else None
    E = weighted_mass_exact(mesh, s)
    if dofs is not None:
        E = E[np.ix_(dofs, dofs)]
    G, change, _ = weighted_mass_graded(mesh, s, dofs, tol=1e-9)
    assert change <= 1e-9
    assert np.abs(E - G).max() <= 1e-7 * np.abs(E).max()


def test_nonconvex_uses_graded():
    mesh = l_shape()
    with pytest.raises(ParameterError, match="convex"):
        weighted_mass_form(mesh, 0.3, method="exact")
    W = weighted_mass_form(mesh, 0.3)
    assert not W.warnings
    G, _, _ = weighted_mass_graded(mesh, 0.3, tol=1e-8)
    assert np.abs(W.matrix - G).max() <= 1e-5 * np.abs(G).max()
    # the distance to the boundary only grows when the notch is filled in
    full = weighted_mass_exact(square(2), 0.3)
    one_l = np.ones(mesh.n_vertices)
    assert one_l @ W.matrix @ one_l < np.ones(9) @ full @ np.ones(9)


def test_weighted_mass_restricted_for_large_s():
    mesh = square(3)
    assert weighted_mass_form(mesh, 0.3).dofs is None
    W = weighted_mass_form(mesh, 0.5)
    assert np.array_equal(W.dofs, mesh.interior_vertices)
    assert np.all(np.isfinite(W.matrix))
    with pytest.raises(FormError, match="interior"):
        weighted_mass_form(square(1), 0.7)
    with pytest.raises(ParameterError, match="unknown"):
        weighted_mass_form(mesh, 0.3, method="magic")


# -- tilde norm ---------------------------------------------------------------------


def test_tilde_divergent_for_boundary_values():
    mesh = square(2)
    v = P1Function.from_callable(mesh, lambda x, y: x)
    with pytest.raises(FormError, match="weighted term divergent"):
        tilde_ss_norm(v, mesh, 0.6)
    assert tilde_ss_norm(v, mesh, 0.3) > 0
    assert tilde_ss_norm(np.zeros(mesh.n_vertices), mesh, 0.6) == 0.0


@pytest.mark.parametrize("s", [0.3, 0.7])
@pytest.mark.parametrize("h", [0.2, 3.0])
def test_tilde_scaling_exact(s, h):
    ref = square(3)
    img = apply_map(ref, AffineMap.scaling(h, 2, x0=[1.0, -2.0]))
    A, B = tilde_form(ref, s).matrix, tilde_form(img, s).matrix
    assert np.abs(B - h ** (2 - 2 * s) * A).max() <= 1e-10 * np.abs(B).max()


def test_tilde_dominates_slobodeckij(rng):
    mesh = square(3)
    suite = NormSuite(mesh)
    v = np.zeros(mesh.n_vertices)
    v[mesh.interior_vertices] = rng.standard_normal(len(mesh.interior_vertices))
    for s in (0.3, 0.7):
        assert suite.norm_tilde(v, s) > suite.semi_ss(v, s)


# -- Poincare-Friedrichs constants ----------------------------------------------------


def test_pf_ss_constant_examples():
    assert pf_ss_constant(domain_metrics(square(2)), 0.5) == pytest.approx(2**0.25, rel=1e-15)
    assert pf_ss_constant(domain_metrics(interval(3)), 0.5) == 1.0
    big = domain_metrics(apply_map(interval(3), AffineMap.scaling(4.0, 1)))
    assert pf_ss_constant(big, 0.25) == pytest.approx(0.5 * 2**-0.5 * 4**0.75, rel=1e-14)


@pytest.mark.parametrize("mesh", [interval(8), square(2), ltriangle(2)])
def test_pf_inequalities_hold(mesh, rng):
    suite = suite_for(mesh)
    for s in (0.25, 0.75):
        consts = estimate_equivalence_constants(suite, s)
        for _ in range(5):
            v = rng.standard_normal(mesh.n_vertices) + rng.uniform(-2, 2)
            assert check_pf_ss(v, suite, s).passed
            assert check_pf_interp(v, suite, s, consts).passed


# -- discrete equivalence constants -----------------------------------------------------


def test_pencil_of_identical_forms():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    lo, hi, _, _ = pencil_extremes(A, A)
    assert lo == pytest.approx(1.0, rel=1e-13)
    assert hi == pytest.approx(1.0, rel=1e-13)
    with pytest.raises(SpectralError, match="indefinite"):
        pencil_extremes(np.diag([1.0, -1.0]), np.eye(2))


@pytest.mark.parametrize("mesh", [interval(8), square(2)])
def test_constants_on_unit_measure_domains(mesh):
    for s in (0.25, 0.5, 0.75):
        c = estimate_equivalence_constants(mesh, s)
        assert 0 < c.k_h <= 1.0 + 1e-12 <= c.K_h + 2e-12
        assert c.C_pf_i_h == pytest.approx(1.0, rel=1e-10)
        assert c.C_pf_i_lower == pytest.approx(c.C_pf_i_h / math.sqrt(2))


def test_constants_witnesses_attain_extremes():
    mesh = ltriangle(2)
    suite = suite_for(mesh)
    c = estimate_equivalence_constants(suite, 0.5)
    x = c.witnesses["K_h"]
    lhs = suite.l2_sq(x) + suite.semi_ss(x, 0.5)
    rhs = suite.l2_sq(x) + suite.semi_interp(x, 0.5)
    assert lhs / rhs == pytest.approx(c.K_h**2, rel=1e-9)


def test_constants_stable_under_refinement():
    for s in (0.25, 0.75):
        a = estimate_equivalence_constants(interval(8), s)
        b = estimate_equivalence_constants(refine(interval(8)), s)
        assert b.k_h == pytest.approx(a.k_h, rel=0.2)
        assert b.K_h == pytest.approx(a.K_h, rel=0.2)


def test_constants_json_roundtrip():
    c = estimate_equivalence_constants(interval(6), 0.5)
    back = EquivalenceConstants.from_json(c.to_json())
    # the JSON text is rounded to report precision, so the second trip is exact
    assert back.to_json() == c.to_json()
    assert back.K_h == pytest.approx(c.K_h, rel=1e-11)
    assert back.mesh_hash == c.mesh_hash
    d = json.loads(c.to_json())
    assert d["flags"]["C_pf_ss"] == "explicit formula"
    half = c.with_K_factor(0.5)
    assert half.K_h == pytest.approx(0.5 * c.K_h)
    assert half.with_K_factor(1.0).K_h == pytest.approx(c.K_h)
    assert "0.5" in json.loads(half.to_json())["flags"]["K_h"]


def test_suite_caches_forms():
    mesh = square(2)
    suite = suite_for(mesh)
    assert suite_for(mesh) is suite
    assert suite.slobodeckij(0.5) is suite.slobodeckij(0.5)
    assert suite.tilde(0.5) is suite.tilde(0.5)
    assert suite_for(suite) is suite
