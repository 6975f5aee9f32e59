import math

import numpy as np
import pytest

from fracnorm.fespace import P1Function
from fracnorm.geometry import AffineMap, apply_map, interval, ltriangle, square
from fracnorm.norms import pf_ss_constant
from fracnorm.slobodeckij import ParameterError, assemble_slobodeckij
from fracnorm.verify import (
    EXACT_RTOL,
    Ensemble,
    EnsembleError,
    build_ensemble,
    check_theorems,
    check_transform_bounds,
    default_maps,
    fit_slope,
    reference_constants,
    remark_blowup_study,
    reports_to_json,
    run_verification,
    scaling_study,
    summarize,
)

HS = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]


@pytest.fixture(scope="module")
def interval_ensemble():
    return build_ensemble(interval(6), seed=3)


@pytest.mark.parametrize("dim", [1, 2])
def test_default_maps(dim):
    maps = default_maps(dim)
    assert len(maps) >= 20
    assert all(F.dim == dim for F in maps)
    assert len({F.label for F in maps}) == len(maps)


def test_ensemble_size(interval_ensemble):
    e = interval_ensemble
    assert len(e.functions) >= 20
    assert len(e.s_values) == 3
    assert any(v.label == "constant" for v in e.functions)
    assert all(v.vanishes_on_boundary() for v in e.dirichlet_functions)
    d = e.describe()
    assert d["n_functions"] == len(e.functions) and d["seed"] == 3


def test_empty_ensemble_rejected():
    with pytest.raises(EnsembleError, match="empty"):
        build_ensemble(interval(4), maps=[])
    with pytest.raises(EnsembleError):
        Ensemble(interval(4), [], [], [AffineMap.identity(1)], (0.5,), 0)


def test_identity_map_has_zero_slack():
    ens = build_ensemble(square(2), s_values=(0.3, 0.7), maps=[AffineMap.identity(2)], witnesses=False)
    reports = check_transform_bounds(ens)
    exact = [r for r in reports if r.bound_id.startswith(("scale_", "la_scale_semi3"))]
    assert len(exact) > 100
    for r in exact:
        assert abs(r.slack) <= 1e-10 * max(abs(r.rhs), 1e-300), r.describe()


def test_doubling_keeps_semi_norm_at_half_in_1d():
    ref = interval(6)
    img = apply_map(ref, AffineMap.scaling(2.0, 1))
    v = np.random.default_rng(5).standard_normal(ref.n_vertices)
    a = assemble_slobodeckij(ref, 0.5).value(v)
    b = assemble_slobodeckij(img, 0.5).value(v)
    assert b == pytest.approx(a, rel=1e-10)


def test_shear_ensemble_passes_at_exact_rtol():
    shears = [AffineMap.shear(t) for t in (-2.0, -0.5, 0.25, 1.0, 3.0)]
    ens = build_ensemble(square(2), s_values=(0.5,), maps=shears, witnesses=False)
    reports = check_transform_bounds(ens, rtol=EXACT_RTOL)
    assert reports and all(r.passed for r in reports)


def test_transform_bounds_cover_all_ids(interval_ensemble):
    reports = check_transform_bounds(interval_ensemble, maps=default_maps(1)[:3])
    ids = {r.bound_id.rsplit(".", 1)[0] for r in reports if r.bound_id.endswith((".lower", ".upper"))}
    assert {"scale_int", "scale_tilde", "scale_semi_int", "scale_semi_tilde", "la_scale_semi3"} <= ids
    assert all(r.passed for r in reports)


def test_theorem_suite_passes(interval_ensemble):
    reports = check_theorems(interval_ensemble)
    ids = {r.bound_id for r in reports}
    for name in ("thm1.i", "thm1.ii", "thm2.i", "thm2.ii", "thm3.i", "thm3.ii", "thm_main.i.a",
                 "thm_main.i.b", "thm_main.ii.a", "thm_main.ii.b", "thm_main.iii.a", "thm_main.iii.b"):
        assert name in ids
    failed = [r.describe() for r in reports if not r.passed]
    assert not failed, failed[:5]


def test_identity_factor_of_second_theorem():
    mesh = ltriangle(2)
    ens = build_ensemble(mesh, s_values=(0.4,), maps=[AffineMap.identity(2)], witnesses=False)
    C = pf_ss_constant(ens.suite.metrics, 0.4)
    for r in check_theorems(ens):
        if r.bound_id == "thm2.ii":
            x = next(v for v in ens.functions if v.label == r.metadata["function"])
            ss = ens.suite.semi_ss(x, 0.4)
            assert r.rhs == pytest.approx((1.0 + C**2) * ss, rel=1e-12, abs=1e-300)


def test_quotient_interval_is_nonempty(interval_ensemble):
    reports = check_theorems(interval_ensemble, maps=[])
    by_key = {}
    for r in reports:
        if r.bound_id in ("la2.lower", "la3"):
            key = (r.metadata["s"], r.metadata["function"])
            by_key.setdefault(key, {})[r.bound_id] = r
    for pair in by_key.values():
        lower = pair["la2.lower"].lhs
        upper = pair["la3"].rhs
        assert lower <= upper * (1 + 1e-6)


def test_halved_K_is_detected(interval_ensemble):
    reports, constants = run_verification(interval_ensemble, K_factor=0.5)
    failed = {r.bound_id for r in reports if not r.passed}
    assert "prop_norms.upper" in failed
    assert all(c.K_factor == 0.5 for c in constants.values())
    summary = {row["bound_id"]: row for row in summarize(reports)}
    assert summary["prop_norms.upper"]["n_passed"] < summary["prop_norms.upper"]["n_checked"]


def test_reports_are_deterministic():
    def once():
        ens = build_ensemble(interval(5), seed=11, maps=default_maps(1)[:4])
        return reports_to_json(run_verification(ens)[0])

    assert once() == once()


# -- scaling studies -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "mesh, f, s, expected",
    [
        (interval(6), lambda x: x * (1 - x), 0.5, 0.0),
        (interval(6), lambda x: x * (1 - x), 0.25, 0.5),
        (square(2), lambda x, y: x * (1 - x) * y * (1 - y), 0.5, 1.0),
    ],
)
def test_scaling_slopes(mesh, f, s, expected):
    v = P1Function.from_callable(mesh, f)
    fits = scaling_study(v, mesh, s, HS)
    assert {fit.quantity for fit in fits} == {"semi_ss", "semi_int", "norm_h10", "norm_tilde"}
    for fit in fits:
        assert fit.expected == expected
        assert abs(fit.deviation) <= 0.02, fit.to_row()


def test_scaling_study_without_zero_trace():
    mesh = interval(4)
    v = P1Function.from_callable(mesh, lambda x: x)
    assert {f.quantity for f in scaling_study(v, mesh, 0.7, HS)} == {"semi_ss", "semi_int"}
    assert {f.quantity for f in scaling_study(v, mesh, 0.3, HS)} == {"semi_ss", "semi_int", "norm_tilde"}


def test_scaling_study_preconditions():
    mesh = interval(4)
    v = P1Function.from_callable(mesh, lambda x: x)
    with pytest.raises(ParameterError, match="3 points"):
        scaling_study(v, mesh, 0.5, [1.0, 0.01])
    with pytest.raises(ParameterError, match="1.5 decades"):
        scaling_study(v, mesh, 0.5, [1.0, 0.5, 0.25])
    with pytest.raises(ParameterError, match="nonconstant"):
        scaling_study(np.ones(5), mesh, 0.5, HS)
    with pytest.raises(ParameterError, match="degenerate"):
        fit_slope([1.0, 2.0, 3.0], [1.0, -1.0, 2.0])


def test_fit_slope_recovers_power_law():
    hs = np.geomspace(1e-2, 1.0, 7)
    assert fit_slope(hs, 3.0 * hs**1.25) == pytest.approx(1.25, abs=1e-12)


def test_remark_study():
    mesh = interval(6)
    v = P1Function.from_callable(mesh, lambda x: x)
    fits = {f.quantity: f for f in remark_blowup_study(v, mesh, 0.5, HS)}
    # the L2 companion scales exactly as h^(-2s)
    assert fits["ratio_l2"].slope == pytest.approx(-1.0, abs=1e-9)
    assert fits["ratio"].expected == -1.0
    # the ratio itself decreases with h but flattens towards h^0 as h -> 0
    assert fits["ratio"].slope < 0
    assert math.isfinite(fits["ratio"].deviation)
    with pytest.raises(ParameterError, match="precondition"):
        remark_blowup_study(np.full(7, 2.0), mesh, 0.5, HS)


def test_reference_constants_cover_all_orders(interval_ensemble):
    c = reference_constants(interval_ensemble)
    assert sorted(c) == sorted(interval_ensemble.s_values)
    assert all(v.k_h <= v.K_h for v in c.values())
