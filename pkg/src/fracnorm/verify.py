"""Ensembles of functions and affine maps, bound checks and scaling studies.

Every inequality is checked on concrete P1 functions: the reference mesh
carries the function, the map ``F`` produces the image mesh, and since P1
functions transform by copying nodal values both sides of each bound are
assembled directly.  Constants that are not explicit come from the
reference mesh only, as discrete estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fespace import P1Function, coefficients_of
from .geometry import AffineMap, Mesh, apply_map, domain_metrics, map_bound_constants
from .norms import (
    EquivalenceConstants,
    NormSuite,
    check_pf_interp,
    check_pf_ss,
    estimate_equivalence_constants,
    pf_ss_constant,
)
from .report import (  # noqa: F401  (re-exported)
    BoundReport,
    make_report,
    reports_to_json,
    sort_reports,
    summarize,
    summary_csv,
    write_csv,
)
from .slobodeckij import ParameterError, QuadratureSpec, check_order

DEFAULT_S = (0.25, 0.5, 0.75)
EXACT_RTOL = 1e-8
QUADRATURE_RTOL = 1e-6


class EnsembleError(ValueError):
    """Raised for an empty or inconsistent ensemble."""


# -- ensembles -------------------------------------------------------------------


def default_maps(dim: int) -> list[AffineMap]:
    """At least twenty maps per dimension: scalings, stretches, shears, rotations, compositions."""
    if dim == 1:
        maps = [AffineMap.identity(1)]
        for k in range(-6, 7):
            if k:
                maps.append(AffineMap.scaling(2.0 ** (k / 2), 1, x0=[0.1 * k]))
        for h in (0.125, 0.3, 1.0, 1.7, 2.5, 5.0, 8.0):
            maps.append(AffineMap([[-h]], [h], label=f"reflect({h:g})"))
        return maps
    if dim != 2:
        raise EnsembleError("maps are available for dimensions 1 and 2")
    maps = [AffineMap.identity(2)]
    for h in (0.125, 0.25, 0.5, 2.0, 4.0, 8.0):
        maps.append(AffineMap.scaling(h, 2, x0=[h, -0.5]))
    maps += [
        AffineMap.diagonal(2.0, 0.5),
        AffineMap.diagonal(1.0, 3.0),
        AffineMap.diagonal(0.25, 1.0, x0=[1.0, 1.0]),
        AffineMap.shear(0.5),
        AffineMap.shear(1.0),
        AffineMap.shear(-2.0, x0=[0.0, 2.0]),
        AffineMap.rotation(math.pi / 6),
        AffineMap.rotation(math.pi / 3, x0=[3.0, -1.0]),
        AffineMap.rotation(2.0),
    ]
    compositions = [
        ("rot(pi/4)*diag(3,1)", AffineMap.rotation(math.pi / 4), AffineMap.diagonal(3.0, 1.0)),
        ("shear(1)*scale(0.25)", AffineMap.shear(1.0), AffineMap.scaling(0.25, 2)),
        ("diag(0.5,2)*rot(1)", AffineMap.diagonal(0.5, 2.0), AffineMap.rotation(1.0)),
        ("rot(0.3)*shear(-0.7)", AffineMap.rotation(0.3), AffineMap.shear(-0.7)),
        ("reflect*scale(2)", AffineMap.diagonal(-1.0, 1.0), AffineMap.scaling(2.0, 2)),
    ]
    for label, F, G in compositions:
        H = F.compose(G)
        maps.append(AffineMap(H.B, H.x0, label=label))
    return maps


@dataclass
class Ensemble:
    """Reference mesh, functions, maps and orders of one verification run.

    ``dirichlet_functions`` vanish on the boundary; they feed the checks of
    the norms defined on the Dirichlet space (interpolation with ``H^1_0``
    and the tilde norm).
    """

    reference: Mesh
    functions: list
    dirichlet_functions: list
    maps: list
    s_values: tuple
    seed: int
    mesh_label: str = ""
    suite: NormSuite | None = field(default=None, repr=False)
    _images: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.functions or not self.maps or not self.s_values:
            raise EnsembleError("empty ensemble: functions, maps and s values are all required")
        self.s_values = tuple(check_order(s) for s in self.s_values)
        if self.suite is None:
            self.suite = NormSuite(self.reference)
        if not self.mesh_label:
            self.mesh_label = self.reference.mesh_hash[:12]

    def describe(self) -> dict:
        return {
            "mesh": self.mesh_label,
            "mesh_hash": self.reference.mesh_hash,
            "n_functions": len(self.functions),
            "n_dirichlet_functions": len(self.dirichlet_functions),
            "maps": [F.label for F in self.maps],
            "s_values": list(self.s_values),
            "seed": self.seed,
        }


def _unit(x: np.ndarray) -> np.ndarray:
    m = float(np.abs(x).max())
    return x / m if m > 0 else x


def _polynomials(mesh: Mesh) -> list[tuple[str, callable]]:
    if mesh.dim == 1:
        return [
            ("x", lambda x: x),
            ("x^2", lambda x: x**2),
            ("x^3-x", lambda x: x**3 - x),
            ("|x-0.4|", lambda x: np.abs(x - 0.4)),
            ("cos(3x)", lambda x: np.cos(3.0 * x)),
        ]
    return [
        ("x", lambda x, y: x),
        ("y", lambda x, y: y),
        ("x+2y", lambda x, y: x + 2.0 * y),
        ("x^2", lambda x, y: x**2),
        ("xy", lambda x, y: x * y),
        ("x^2-y^2", lambda x, y: x**2 - y**2),
        ("cos(3x)sin(2y)", lambda x, y: np.cos(3.0 * x) * np.sin(2.0 * y)),
    ]


def build_ensemble(
    mesh: Mesh,
    s_values=DEFAULT_S,
    seed: int = 0,
    maps: list | None = None,
    n_random: int = 8,
    n_modes: int = 4,
    witnesses: bool = True,
    spec: QuadratureSpec | None = None,
    threads: int | None = None,
    mesh_label: str = "",
) -> Ensemble:
    """Seeded functions on ``mesh`` plus the default maps of its dimension.

    The functions are random nodal vectors, interpolated polynomials, low
    Neumann eigenmodes, the constant (tagged ``constant``) and, with
    ``witnesses``, the extremal eigenvectors of the pencils that define the
    discrete constants.  The Dirichlet list holds random interior vectors,
    low Dirichlet modes and the boundary-distance function with its square.
    """
    suite = NormSuite(mesh, spec=spec, threads=threads)
    s_values = tuple(check_order(s) for s in s_values)
    rng = np.random.default_rng(seed)
    n = mesh.n_vertices
    fns = []
    for i in range(n_random):
        fns.append(P1Function(mesh, rng.standard_normal(n), f"random{i}"))
    for label, f in _polynomials(mesh):
        fns.append(P1Function.from_callable(mesh, f, label))
    modes = suite.neumann.eigenvectors
    for k in range(1, min(n_modes + 1, modes.shape[1])):
        fns.append(P1Function(mesh, _unit(modes[:, k]), f"mode{k}"))
    fns.append(P1Function(mesh, np.ones(n), "constant"))
    if witnesses:
        for s in s_values:
            const = estimate_equivalence_constants(suite, s)
            for name in ("k_h", "K_h", "C_pf_i_h"):
                w = P1Function(mesh, _unit(const.witnesses[name]), f"witness_{name}_s{s:g}")
                if not w.is_constant(1e-8):  # constant witnesses duplicate "constant"
                    fns.append(w)

    interior = mesh.interior_vertices
    dfns = []
    if len(interior):
        for i in range(n_random):
            x = np.zeros(n)
            x[interior] = rng.standard_normal(len(interior))
            dfns.append(P1Function(mesh, x, f"interior_random{i}"))
        dec = suite.dirichlet
        for k in range(min(n_modes, dec.eigenvectors.shape[1])):
            x = np.zeros(n)
            x[dec.dofs] = _unit(dec.eigenvectors[:, k])
            dfns.append(P1Function(mesh, x, f"dirichlet_mode{k + 1}"))
        dist = mesh.boundary_distance(mesh.vertices)
        dist[mesh.boundary_vertices] = 0.0
        dfns.append(P1Function(mesh, _unit(dist), "dist"))
        dfns.append(P1Function(mesh, _unit(dist**2), "dist^2"))
    return Ensemble(
        reference=mesh,
        functions=fns,
        dirichlet_functions=dfns,
        maps=list(default_maps(mesh.dim) if maps is None else maps),
        s_values=s_values,
        seed=seed,
        mesh_label=mesh_label,
        suite=suite,
    )


def reference_constants(ensemble: Ensemble, K_factor: float = 1.0) -> dict:
    """Discrete constants on the reference mesh for every ``s`` of the ensemble."""
    out = {}
    for s in ensemble.s_values:
        c = estimate_equivalence_constants(ensemble.suite, s)
        out[s] = c.with_K_factor(K_factor) if K_factor != 1.0 else c
    return out


# -- evaluation helpers ------------------------------------------------------------


def _image_suite(ensemble: Ensemble, F: AffineMap) -> NormSuite:
    """Norm suite on ``F(reference)``, cached so every check reuses the assembled forms."""
    key = (F.B.tobytes(), F.x0.tobytes())
    if key not in ensemble._images:
        ref = ensemble.suite
        ensemble._images[key] = NormSuite(
            apply_map(ensemble.reference, F), spec=ref.spec, threads=ref.threads,
            backend=ref.backend, max_vertices=ref.max_vertices,
        )
    return ensemble._images[key]


def _semis(suite: NormSuite, x: np.ndarray, s: float) -> dict:
    return {
        "ss": suite.semi_ss(x, s),
        "int": suite.semi_interp(x, s),
        "inf": suite.semi_inf(x, s),
        "shift": suite.shifted_l2_sq(x),
        "l2": suite.l2_sq(x),
    }


def _const(value: float, source: str) -> dict:
    return {"value": float(value), "source": source}


def _geometry_constants(F: AffineMap) -> dict:
    return {
        "det_B": _const(F.abs_det, "explicit formula"),
        "norm_B": _const(F.norm_B, "explicit formula"),
        "norm_Binv": _const(F.norm_Binv, "explicit formula"),
    }


def _two_sided(out, bound_id, lower, value, upper, rtol, constants, meta):
    out.append(make_report(f"{bound_id}.lower", lower, value, rtol, constants, **meta))
    out.append(make_report(f"{bound_id}.upper", value, upper, rtol, constants, **meta))


# -- transformation bounds ----------------------------------------------------------


def check_transform_bounds(
    ensemble: Ensemble, rtol: float = QUADRATURE_RTOL, maps: list | None = None
) -> list[BoundReport]:
    """Two-sided affine transformation bounds for every ``(v, F, s)``.

    Covers the interpolation norm on the Dirichlet space and the tilde norm
    (Dirichlet functions), the interpolation and Slobodeckij semi-norms, the
    quotient semi-norm, the geometric map bounds, and the diameter/shape
    ratio forms of the scaling bounds.
    """
    ref = ensemble.suite
    n = ensemble.reference.dim
    ref_metrics = ref.metrics
    Dh, rh = ref_metrics.diameter, ref_metrics.shape_ratio
    out: list[BoundReport] = []
    for F in ensemble.maps if maps is None else maps:
        img = _image_suite(ensemble, F)
        metrics = img.metrics
        D, r = metrics.diameter, metrics.shape_ratio
        det, b, bi = F.abs_det, F.norm_B, F.norm_Binv
        geo = _geometry_constants(F)
        mb = map_bound_constants(F, ref_metrics, metrics)
        gmeta = {"map": F.label, "mesh": ensemble.mesh_label}
        for bid, val, bound in (
            ("aff1.norm_B", mb.norm_B, mb.norm_B_bound),
            ("aff1.norm_Binv", mb.norm_Binv, mb.norm_Binv_bound),
            ("aff1.cond", mb.norm_B * mb.norm_Binv, mb.cond_bound),
            ("aff2.det", mb.abs_det, mb.det_bound),
            ("aff2.det_inv", 1.0 / mb.abs_det, mb.det_inv_bound),
        ):
            out.append(make_report(bid, val, bound, EXACT_RTOL, geo, **gmeta))
        for s in ensemble.s_values:
            scale = (D / Dh) ** (n - 2 * s)
            for v in ensemble.functions:
                x = coefficients_of(v)
                meta = {**gmeta, "s": s, "function": v.label}
                a, h = _semis(img, x, s), _semis(ref, x, s)
                _two_sided(out, "scale_semi_int", det * b ** (-2 * s) * h["int"], a["int"],
                           det * bi ** (2 * s) * h["int"], rtol, geo, meta)
                _two_sided(out, "scale_semi_tilde", det**2 * b ** (-n - 2 * s) * h["ss"], a["ss"],
                           det**2 * bi ** (n + 2 * s) * h["ss"], rtol, geo, meta)
                _two_sided(
                    out, "la_scale_semi3",
                    det**2 * b ** (-n - 2 * s) * h["ss"] + det * h["shift"], a["inf"],
                    det**2 * bi ** (n + 2 * s) * h["ss"] + det * h["shift"], rtol, geo, meta,
                )
                _two_sided(out, "cor_scale.semi_int",
                           scale * r**-n * rh ** (-2 * s) * h["int"], a["int"],
                           scale * r ** (2 * s) * rh**n * h["int"], rtol, geo, meta)
                _two_sided(out, "cor_scale.semi_ss",
                           scale * r ** (-2 * n) * rh ** (-n - 2 * s) * h["ss"], a["ss"],
                           scale * r ** (n + 2 * s) * rh ** (2 * n) * h["ss"], rtol, geo, meta)
            for v in ensemble.dirichlet_functions:
                x = coefficients_of(v)
                meta = {**gmeta, "s": s, "function": v.label}
                i_img, i_ref = img.norm_h10(x, s), ref.norm_h10(x, s)
                t_img, t_ref = img.norm_tilde(x, s), ref.norm_tilde(x, s)
                _two_sided(out, "scale_int", det * b ** (-2 * s) * i_ref, i_img,
                           det * bi ** (2 * s) * i_ref, rtol, geo, meta)
                _two_sided(
                    out, "scale_tilde",
                    det * b ** (-2 * s) * min(det * b**-n, 1.0) * t_ref, t_img,
                    det * bi ** (2 * s) * max(det * bi**n, 1.0) * t_ref, rtol, geo, meta,
                )
                _two_sided(out, "cor_scale.h10",
                           scale * r**-n * rh ** (-2 * s) * i_ref, i_img,
                           scale * r ** (2 * s) * rh**n * i_ref, rtol, geo, meta)
                _two_sided(
                    out, "cor_scale.tilde",
                    scale * r**-n * rh ** (-2 * s) * min(r**-n * rh**-n, 1.0) * t_ref, t_img,
                    scale * r ** (2 * s) * rh**n * max(r**n * rh**n, 1.0) * t_ref,
                    rtol, geo, meta,
                )
    return out


# -- theorem suite -------------------------------------------------------------------


def _constant_table(c: EquivalenceConstants, C_ss: float) -> dict:
    K_source = "discrete estimate" if c.K_factor == 1.0 else f"discrete estimate times {c.K_factor:g}"
    return {
        "k_h": _const(c.k_h, "discrete estimate"),
        "K_h": _const(c.K_h, K_source),
        "C_pf_i_h": _const(c.C_pf_i_h, "discrete estimate"),
        "C_pf_ss": _const(C_ss, "explicit formula"),
    }


def check_reference_bounds(
    ensemble: Ensemble, constants: dict, rtol: float = QUADRATURE_RTOL
) -> list[BoundReport]:
    """Fixed-domain chains on the reference mesh (no map involved)."""
    ref = ensemble.suite
    out: list[BoundReport] = []
    for s in ensemble.s_values:
        c = constants[s]
        C_ss = pf_ss_constant(ref.metrics, s)
        table = _constant_table(c, C_ss)
        k2, K2, Ci2 = c.k_h**2, c.K_h**2, c.C_pf_i_h**2
        q = s * (1.0 - s)
        for v in ensemble.functions:
            x = coefficients_of(v)
            meta = {"mesh": ensemble.mesh_label, "s": s, "function": v.label}
            h = _semis(ref, x, s)
            full_ss = h["l2"] + h["ss"]
            full_int = h["l2"] + h["int"]
            out.append(make_report("prop_norms.lower", c.k_h**2 * full_int, full_ss, rtol, table, **meta))
            out.append(make_report("prop_norms.upper", full_ss, K2 * full_int, rtol, table, **meta))
            _two_sided(out, "la1.identity", h["ss"] + h["shift"], h["inf"],
                       h["ss"] + h["shift"], EXACT_RTOL, table, meta)
            out.append(make_report("la1.lower", h["ss"], h["inf"], rtol, table, **meta))
            out.append(make_report("la1.upper", h["inf"], (1.0 + C_ss**2) * h["ss"], rtol, table, **meta))
            out.append(make_report("la2.lower", k2 * h["int"], h["inf"], rtol, table, **meta))
            out.append(make_report("la2.upper", h["inf"], 3.0 * K2 * h["int"] + K2 / q * h["shift"],
                                   rtol, table, **meta))
            out.append(make_report("cor", full_ss, K2 / q * h["l2"] + 3.0 * K2 * h["int"],
                                   rtol, table, **meta))
            out.append(make_report("la3", h["inf"], K2 * (3.0 + Ci2 / q) * h["int"], rtol, table, **meta))
            out.append(check_pf_ss(x, ref, s, rtol, mesh=ensemble.mesh_label, function=v.label))
            out.append(check_pf_interp(x, ref, s, c, rtol, mesh=ensemble.mesh_label, function=v.label))
    return out


def check_theorems(
    ensemble: Ensemble, constants: dict | None = None, rtol: float = QUADRATURE_RTOL,
    maps: list | None = None, K_factor: float = 1.0,
) -> list[BoundReport]:
    """Equivalence theorems on every mapped domain with reference-mesh constants.

    The map-based forms use ``|det B|``, ``||B||`` and ``||B^-1||``; the
    shape-regular forms replace them by diameters and shape ratios of both
    domains.  The fixed-domain chains on the reference mesh are included.
    """
    if constants is None:
        constants = reference_constants(ensemble, K_factor)
    ref = ensemble.suite
    n = ensemble.reference.dim
    Dh, rh = ref.metrics.diameter, ref.metrics.shape_ratio
    out = check_reference_bounds(ensemble, constants, rtol)
    for F in ensemble.maps if maps is None else maps:
        img = _image_suite(ensemble, F)
        D, r = img.metrics.diameter, img.metrics.shape_ratio
        det, b, bi = F.abs_det, F.norm_B, F.norm_Binv
        for s in ensemble.s_values:
            c = constants[s]
            C_ss = pf_ss_constant(ref.metrics, s)
            table = {**_constant_table(c, C_ss), **_geometry_constants(F)}
            q = s * (1.0 - s)
            up = c.K_h**2 * (3.0 + c.C_pf_i_h**2 / q)
            lo = c.k_h**-2
            rr = r ** (n + 2 * s) * rh ** (n + 2 * s)
            for v in ensemble.functions:
                x = coefficients_of(v)
                meta = {"map": F.label, "mesh": ensemble.mesh_label, "s": s, "function": v.label}
                a = _semis(img, x, s)
                ss, it, inf = a["ss"], a["int"], a["inf"]

                def rep(bid, lhs, rhs):
                    out.append(make_report(bid, lhs, rhs, rtol, table, **meta))

                rep("thm1.i", ss, det * bi ** (n + 2 * s) * b ** (2 * s) * up * it)
                rep("thm1.ii", it, b ** (n + 2 * s) / det * bi ** (2 * s) * lo * (1.0 + C_ss**2) * ss)
                rep("thm2.i", ss, inf)
                rep("thm2.ii", inf, (1.0 + b ** (n + 2 * s) / det * C_ss**2) * ss)
                rep("thm3.i", it, bi ** (2 * s) * max(b ** (n + 2 * s) / det, 1.0) * lo * inf)
                rep("thm3.ii", inf, b ** (2 * s) * max(det * bi ** (n + 2 * s), 1.0) * up * it)
                rep("thm_main.i.a", ss, rr * up * it)
                rep("thm_main.i.b", it, rr * lo * (1.0 + C_ss**2) * ss)
                rep("thm_main.ii.a", ss, inf)
                rep("thm_main.ii.b", inf,
                    (1.0 + (D / Dh) ** (2 * s) * r**n * rh ** (n + 2 * s) * C_ss**2) * ss)
                rep("thm_main.iii.a", it,
                    max(r**n * rh ** (n - 2 * s), (Dh / D) ** (2 * s)) * r ** (2 * s) * lo * inf)
                rep("thm_main.iii.b", inf,
                    max(r ** (n + 2 * s) * rh**n, (D / Dh) ** (2 * s)) * rh ** (2 * s) * up * it)
    return out


def run_verification(
    ensemble: Ensemble, rtol: float = QUADRATURE_RTOL, K_factor: float = 1.0
) -> tuple[list[BoundReport], dict]:
    """Transformation bounds plus the theorem suite; returns sorted reports and the constants."""
    constants = reference_constants(ensemble, K_factor)
    reports = check_transform_bounds(ensemble, rtol) + check_theorems(ensemble, constants, rtol)
    return sort_reports(reports), constants


# -- scaling studies --------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of ``log value`` against ``log h``."""

    quantity: str
    s: float
    slope: float
    expected: float
    hs: tuple
    values: tuple

    @property
    def deviation(self) -> float:
        return self.slope - self.expected

    def to_row(self) -> dict:
        return {
            "quantity": self.quantity,
            "s": self.s,
            "fitted_slope": self.slope,
            "expected": self.expected,
            "deviation": self.deviation,
            "n_points": len(self.hs),
        }


def fit_slope(hs, values) -> float:
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(hs) < 3:
        raise ParameterError("degenerate fit: at least 3 points are needed")
    if np.any(hs <= 0) or np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ParameterError("degenerate fit: scales and values must be positive and finite")
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


def _check_h_list(hs) -> tuple:
    hs = tuple(float(h) for h in hs)
    if len(hs) < 3:
        raise ParameterError("degenerate fit: at least 3 points are needed")
    if min(hs) <= 0:
        raise ParameterError("scales must be positive")
    if math.log10(max(hs) / min(hs)) < 1.5 - 1e-12:
        raise ParameterError("the h list must span at least 1.5 decades")
    return hs


def _scaled_suites(mesh: Mesh, hs, spec, threads):
    for h in hs:
        yield h, NormSuite(apply_map(mesh, AffineMap.scaling(h, mesh.dim)), spec=spec, threads=threads)


def scaling_study(
    v_hat, mesh: Mesh, s: float, hs, spec: QuadratureSpec | None = None, threads=None
) -> list[SlopeFit]:
    """Slopes of the scalable quantities under ``B = hI``; expected ``n - 2s``.

    The Dirichlet-space norms are included when ``v_hat`` vanishes on the
    boundary (or, for the tilde norm, when ``s < 1/2``).
    """
    s = check_order(s)
    hs = _check_h_list(hs)
    x = coefficients_of(v_hat)
    if np.ptp(x) == 0.0:
        raise ParameterError("the function must be nonconstant")
    zero_trace = bool(np.all(x[mesh.boundary_vertices] == 0.0))
    vals: dict[str, list] = {"semi_ss": [], "semi_int": []}
    if zero_trace:
        vals["norm_h10"] = []
    if zero_trace or s < 0.5:
        vals["norm_tilde"] = []
    for _, suite in _scaled_suites(mesh, hs, spec, threads):
        vals["semi_ss"].append(suite.semi_ss(x, s))
        vals["semi_int"].append(suite.semi_interp(x, s))
        if "norm_h10" in vals:
            vals["norm_h10"].append(suite.norm_h10(x, s))
        if "norm_tilde" in vals:
            vals["norm_tilde"].append(suite.norm_tilde(x, s))
    expected = mesh.dim - 2.0 * s
    return [SlopeFit(q, s, fit_slope(hs, v), expected, hs, tuple(v)) for q, v in vals.items()]


def remark_blowup_study(
    v_hat, mesh: Mesh, s: float, hs, spec: QuadratureSpec | None = None, threads=None
) -> list[SlopeFit]:
    """Ratios that measure how the quotient semi-norm degenerates as ``D -> 0``.

    ``ratio`` is ``|v_h|^2_{L2,H1,s} / |v_h|^2_{s,inf}`` with the nominal
    expectation ``-2s``.  ``ratio_l2`` divides by ``inf_c ||v_h + c||_0^2``
    instead, the lower bound of the quotient semi-norm, whose slope is
    exactly ``-2s``.
    """
    s = check_order(s)
    hs = _check_h_list(hs)
    x = coefficients_of(v_hat)
    if np.ptp(x) == 0.0:
        raise ParameterError("precondition: the function must be nonconstant")
    ratio, ratio_l2 = [], []
    for _, suite in _scaled_suites(mesh, hs, spec, threads):
        it = suite.semi_interp(x, s)
        ratio.append(it / suite.semi_inf(x, s))
        ratio_l2.append(it / suite.shifted_l2_sq(x))
    return [
        SlopeFit("ratio", s, fit_slope(hs, ratio), -2.0 * s, hs, tuple(ratio)),
        SlopeFit("ratio_l2", s, fit_slope(hs, ratio_l2), -2.0 * s, hs, tuple(ratio_l2)),
    ]


SLOPE_COLUMNS = ["quantity", "s", "fitted_slope", "expected", "deviation", "n_points"]


def slopes_csv(fits: list[SlopeFit]) -> str:
    return write_csv([f.to_row() for f in fits], SLOPE_COLUMNS)
