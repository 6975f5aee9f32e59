import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fracnorm.fespace import P1Function, assemble_mass, shifted_l2_sq
from fracnorm.geometry import AffineMap, Mesh, apply_map, interval, ltriangle, square
from fracnorm.slobodeckij import (
    PairClass,
    ParameterError,
    QuadratureSpec,
    assemble_slobodeckij,
    classify_pairs,
    pair_class,
    quotient_form,
    semi_analytic_1d,
)


def linear_semi_1d(s):
    """``|x|_s^2`` on the unit interval."""
    return 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s))


def linear_semi_unit_square(s):
    """``|x|_s^2`` on the unit square by the difference-variable reduction.

    ``int int f(x - y) = int_{[-1,1]^2} (1-|z1|)(1-|z2|) f(z) dz``; in polar
    coordinates the radial integral is a polynomial times ``r^(1-2s)``.
    """
    a = 2.0 - 2.0 * s

    def radial(R, c, sn):
        # int_0^R (1 - r c)(1 - r sn) r^(1-2s) dr
        return R**a / a - (c + sn) * R ** (a + 1) / (a + 1) + c * sn * R ** (a + 2) / (a + 2)

    def f_lo(th):
        c, sn = math.cos(th), math.sin(th)
        return c * c * radial(1.0 / c, c, sn)

    def f_hi(th):
        c, sn = math.cos(th), math.sin(th)
        return c * c * radial(1.0 / sn, c, sn)

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    total = integrate.quad(f_lo, 0.0, math.pi / 4, **opts)[0] + integrate.quad(f_hi, math.pi / 4, math.pi / 2, **opts)[0]
    return 4.0 * total


def graded_interval(n, rng):
    x = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0.05, 0.95, n - 1)]))
    return Mesh(x[:, None], np.column_stack([np.arange(n), np.arange(1, n + 1)]))


@pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_linear_function_1d_closed_form(s):
    mesh = interval(5)
    v = P1Function.from_callable(mesh, lambda x: x)
    assert assemble_slobodeckij(mesh, s).value(v) == pytest.approx(linear_semi_1d(s), rel=1e-8)
    assert semi_analytic_1d(mesh, s).value(v) == pytest.approx(linear_semi_1d(s), rel=1e-12)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_assembly_matches_analytic_on_graded_mesh(s, rng):
    mesh = graded_interval(7, rng)
    A = assemble_slobodeckij(mesh, s).matrix
    B = semi_analytic_1d(mesh, s).matrix
    assert np.abs(A - B).max() <= 1e-8 * np.abs(B).max()


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_linear_function_unit_square(s):
    mesh = square(4)
    v = P1Function.from_callable(mesh, lambda x, y: x)
    assert assemble_slobodeckij(mesh, s).value(v) == pytest.approx(linear_semi_unit_square(s), rel=1e-6)


def test_linear_function_independent_of_mesh():
    """A linear function lies in every P1 space, so refinement must not change its value."""
    v = lambda x, y: 2 * x - y
    vals = [assemble_slobodeckij(m, 0.4).value(P1Function.from_callable(m, v)) for m in (square(1), square(2), square(3))]
    assert np.ptp(vals) <= 1e-6 * vals[0]


@pytest.mark.parametrize("mesh", [interval(6), square(2), ltriangle(2)])
def test_form_structure(mesh):
    S = assemble_slobodeckij(mesh, 0.5)
    assert S.semi and S.s == 0.5
    assert S.is_psd()
    assert np.abs(S.matrix.sum(axis=1)).max() <= 1e-10 * np.abs(S.matrix).max()
    evals = np.linalg.eigvalsh(S.matrix)
    assert evals[1] > 1e-6 * evals[-1]


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e4, 1e4), st.integers(0, 2**31))
def test_shift_invariance(c, seed):
    mesh = interval(6)
    S = assemble_slobodeckij(mesh, 0.3)
    v = np.random.default_rng(seed).standard_normal(mesh.n_vertices)
    assert S.value(v + c) == pytest.approx(S.value(v), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("h", [0.125, 3.0])
@pytest.mark.parametrize("s", [0.25, 0.75])
def test_scaling_law(h, s):
    ref = ltriangle(2)
    img = apply_map(ref, AffineMap.scaling(h, 2, x0=[0.3, -1.0]))
    A = assemble_slobodeckij(ref, s).matrix
    B = assemble_slobodeckij(img, s).matrix
    assert np.allclose(B, h ** (2 - 2 * s) * A, rtol=1e-10, atol=1e-12 * np.abs(B).max())


def test_rotation_invariance():
    ref = square(2)
    img = apply_map(ref, AffineMap.rotation(0.9, x0=[2.0, 1.0]))
    A = assemble_slobodeckij(ref, 0.5).matrix
    B = assemble_slobodeckij(img, 0.5).matrix
    assert np.abs(A - B).max() <= 1e-7 * np.abs(A).max()


def test_quotient_form_decomposition(rng):
    mesh = square(2)
    S = assemble_slobodeckij(mesh, 0.5)
    M = assemble_mass(mesh)
    Q = quotient_form(mesh, 0.5, slobodeckij=S, mass=M)
    v = rng.standard_normal(mesh.n_vertices)
    assert Q.value(v) == pytest.approx(S.value(v) + shifted_l2_sq(v, M), rel=1e-12)
    assert Q.value(v + 7.0) == pytest.approx(Q.value(v), rel=1e-10)


def test_classify_pairs():
    pairs = classify_pairs(square(1))
    assert len(pairs[PairClass.IDENTICAL]) == 2
    assert len(pairs[PairClass.EDGE_TOUCHING]) == 1
    assert len(pairs[PairClass.DISJOINT]) == 0
    mesh = interval(4)
    assert pair_class(mesh, 0, 0) == PairClass.IDENTICAL
    assert pair_class(mesh, 0, 1) == PairClass.VERTEX_TOUCHING
    assert pair_class(mesh, 0, 3) == PairClass.DISJOINT
    total = sum(len(p) for p in classify_pairs(square(2)).values())
    assert total == 8 * 9 // 2


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
def test_invalid_order(s):
    with pytest.raises(ParameterError, match=r"\(0, 1\)"):
        assemble_slobodeckij(interval(2), s)


def test_order_outside_safe_range_warns():
    assert assemble_slobodeckij(interval(3), 0.02).warnings
    assert not assemble_slobodeckij(interval(3), 0.5).warnings


def test_convergence_check():
    spec = QuadratureSpec(check_convergence=True)
    assert not assemble_slobodeckij(square(1), 0.5, spec).warnings
    coarse = QuadratureSpec(gauss_order=2, duffy_order=4, check_convergence=True, convergence_tol=1e-12)
    (w,) = assemble_slobodeckij(square(1), 0.5, coarse).warnings
    assert "not converged" in w


@pytest.mark.parametrize(
    "kwargs", [dict(gauss_order=1), dict(duffy_order=2), dict(near_field_threshold=0.0), dict(max_subdivision=-1)]
)
def test_quadrature_spec_validation(kwargs):
    with pytest.raises(ParameterError):
        QuadratureSpec(**kwargs)


def test_threads_do_not_change_result():
    mesh = square(2)
    A = assemble_slobodeckij(mesh, 0.5, threads=1).matrix
    B = assemble_slobodeckij(mesh, 0.5, threads=3).matrix
    assert np.array_equal(A, B)


def test_refined_quadrature_agrees():
    mesh = ltriangle(2)
    A = assemble_slobodeckij(mesh, 0.5).matrix
    B = assemble_slobodeckij(mesh, 0.5, QuadratureSpec().raised(6)).matrix
    assert np.abs(A - B).max() <= 1e-6 * np.abs(B).max()


@pytest.mark.parametrize(
    "F",
    [
        AffineMap.shear(1.0),
        AffineMap.shear(-2.0),
        AffineMap.diagonal(0.25, 1.0),
        AffineMap.rotation(math.pi / 4).compose(AffineMap.diagonal(3.0, 1.0)),
    ],
)
def test_distorted_meshes_keep_accuracy(F):
    mesh = apply_map(square(2), F)
    A = assemble_slobodeckij(mesh, 0.5).matrix
    B = assemble_slobodeckij(mesh, 0.5, QuadratureSpec(gauss_order=10, duffy_order=16)).matrix
    assert np.abs(A - B).max() <= 1e-6 * np.abs(B).max()


def test_strongly_graded_1d_mesh():
    x = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 12)])
    mesh = Mesh(x[:, None], np.column_stack([np.arange(12), np.arange(1, 13)]))
    A = assemble_slobodeckij(mesh, 0.7).matrix
    B = semi_analytic_1d(mesh, 0.7).matrix
    assert np.abs(A - B).max() <= 1e-8 * np.abs(B).max()
