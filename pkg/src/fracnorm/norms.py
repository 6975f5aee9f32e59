"""Tilde norm, Poincare-Friedrichs constants and discrete equivalence constants.

The weighted term ``||v / dist(., boundary)^s||_0^2`` is a quadratic form
``x^T W x``.  On convex domains the distance is the minimum of the affine
functions ``l_k`` measuring the distance to each supporting line, so every
element splits into convex pieces on which the weight is ``l_k^(-2s)`` with
``l_k`` affine.  Those pieces are integrated exactly by moments in the
direction of ``l_k``.  Other domains use graded subdivision toward the
boundary: sub-simplices touching the boundary where the distance is affine
(or the minimum of a few facet lines) reuse the exact moments, sub-simplices
away from it use Gauss rules, and the rest is refined until two levels agree.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull

from .fespace import (
    FormError,
    QuadraticForm,
    assemble_mass,
    assemble_stiffness,
    coefficients_of,
    integral,
    scatter_dense,
    shifted_l2_sq,
)
from .geometry import (
    DomainMetrics,
    Mesh,
    domain_metrics,
    is_convex,
    point_segment_distance,
    simplex_measures,
)
from .report import BoundReport, dumps_json, make_report
from .slobodeckij import (
    ParameterError,
    QuadratureSpec,
    assemble_slobodeckij,
    check_order,
    gauss01,
    quotient_form,
    simplex_rule,
)
from .spectral import SpectralError, eig, generalized_eigh, interpolation_form

# -- weighted mass: exact route for convex domains -------------------------------


def _distance_lines(mesh: Mesh) -> np.ndarray:
    """Rows ``(g, h)`` with ``l(x) = g.x + h`` the distance to each supporting line."""
    if mesh.dim == 1:
        a, b = float(mesh.vertices.min()), float(mesh.vertices.max())
        return np.array([[1.0, -a], [-1.0, b]])
    hull = ConvexHull(mesh.vertices)
    eqs = -hull.equations / np.linalg.norm(hull.equations[:, :2], axis=1, keepdims=True)
    return _dedupe_lines(eqs)


def _facet_lines(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inward distance line ``(g, h)`` of every boundary facet with its endpoints."""
    if mesh.dim == 1:
        lines = _distance_lines(mesh)
        pts = np.array([[-lines[0, 1]], [lines[1, 1]]])
        return lines, pts, pts
    bf = mesh.boundary_facets
    a, b = mesh.vertices[bf[:, 0]], mesh.vertices[bf[:, 1]]
    d = b - a
    n = np.column_stack([-d[:, 1], d[:, 0]]) / np.linalg.norm(d, axis=1, keepdims=True)
    return np.column_stack([n, -np.einsum("fd,fd->f", n, a)]), a, b


def _clip(poly: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """Part of the convex polygon ``poly`` where ``g.x + h <= 0`` (Sutherland-Hodgman)."""
    if len(poly) == 0:
        return poly
    f = poly @ g + h
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if f[i] <= 0.0:
            out.append(poly[i])
        if (f[i] < 0.0 < f[j]) or (f[j] < 0.0 < f[i]):
            t = f[i] / (f[i] - f[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out).reshape(-1, poly.shape[1])


def _weight_moments(a: float, delta: float, s: float, kmax: int = 3) -> np.ndarray:
    """``m_k = int_0^1 t^k (a + delta t)^(-2s) dt`` for ``a, delta >= 0``.

    Divergent moments (``a = 0``, ``k + 1 <= 2s``) come back as ``inf``.
    """
    e = -2.0 * s
    if delta <= 0.5 * a:
        t, w = gauss01(24)
        vals = w * (a + delta * t) ** e
        return np.array([np.sum(vals * t**k) for k in range(kmax + 1)])
    out = np.empty(kmax + 1)
    for k in range(kmax + 1):
        total = 0.0
        for j in range(k + 1):
            coeff = math.comb(k, j) * (-a) ** (k - j)
            if coeff == 0.0:
                continue
            p = j + 1 + e
            if abs(p) < 1e-13:
                F = math.log((a + delta) / a) if a > 0.0 else math.inf
            elif a == 0.0:
                F = delta**p / p if p > 0.0 else math.inf
            else:
                F = ((a + delta) ** p - a**p) / p
            total += coeff * F
        out[k] = total / delta ** (k + 1)
    return out


def _combine(coef: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``sum_k coef_k m_k`` treating ``0 * inf`` as 0."""
    with np.errstate(invalid="ignore"):
        terms = np.where(coef == 0.0, 0.0, coef * m)
    return terms.sum(axis=-1)


class _Element:
    """Barycentric coordinates of one parent element as an affine map."""

    def __init__(self, coords: np.ndarray):
        d = coords.shape[1]
        T = np.column_stack([coords, np.ones(d + 1)])  # rows (x, 1)
        self.inv = np.linalg.inv(T)  # lambda(x) = (x, 1) @ inv

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.column_stack([pts, np.ones(len(pts))]) @ self.inv


def _cone_2d(lam, A, lA, E0, E1, c, area, s, zero_mask):
    """Contribution of a triangle with apex ``A`` and base ``E0 E1`` on level ``c``."""
    th, wth = gauss01(3)
    E = E0[None, :] + th[:, None] * (E1 - E0)[None, :]
    lamA = lam(A)[0]
    lamE = lam(E)
    if lA > c:  # parametrize from the base, where the weight is smallest
        alpha = lamE.copy()
        beta = lamA[None, :] - lamE
        a0, delta = c, lA - c
        if a0 == 0.0:
            alpha[:, zero_mask] = 0.0
        jac_from_base = True
    else:
        alpha = np.broadcast_to(lamA, lamE.shape).copy()
        beta = lamE - lamA[None, :]
        a0, delta = lA, c - lA
        jac_from_base = False
    m = _weight_moments(a0, delta, s)
    p0 = alpha[:, :, None] * alpha[:, None, :]
    p1 = alpha[:, :, None] * beta[:, None, :] + beta[:, :, None] * alpha[:, None, :]
    p2 = beta[:, :, None] * beta[:, None, :]
    if jac_from_base:  # Jacobian 2|T| (1 - t)
        coef = np.stack([p0, p1 - p0, p2 - p1, -p2], axis=-1)
    else:  # Jacobian 2|T| t
        coef = np.stack([np.zeros_like(p0), p0, p1, p2], axis=-1)
    vals = _combine(coef, m)
    return 2.0 * area * np.einsum("q,qij->ij", wth, vals)


def _triangle_piece(lam, P, lv, s, zero_mask):
    """Integrate ``lam_i lam_j l^(-2s)`` over a triangle on which ``l`` is affine.

    The level line of ``l`` through the middle vertex cuts the triangle into
    at most two cones whose bases are level lines.
    """
    order = np.argsort(-lv, kind="stable")
    P, lv = P[order], lv[order]
    area = abs(float(simplex_measures(P[None])[0]))
    hi, mid, lo = (float(x) for x in lv)
    span = hi - lo
    if span <= 1e-14 * hi:
        bary, w = simplex_rule(2, 3)
        L = lam(bary @ P)
        return area * hi ** (-2.0 * s) * np.einsum("q,qi,qj->ij", w, L, L)
    tol = 1e-13 * span
    if mid - lo <= tol:
        return _cone_2d(lam, P[0], hi, P[1], P[2], lo, area, s, zero_mask)
    if hi - mid <= tol:
        return _cone_2d(lam, P[2], lo, P[1], P[0], hi, area, s, zero_mask)
    tau = (hi - mid) / span
    Q = P[0] + tau * (P[2] - P[0])
    return _cone_2d(lam, P[0], hi, P[1], Q, mid, area * tau, s, zero_mask) + _cone_2d(
        lam, P[2], lo, P[1], Q, mid, area * (1.0 - tau), s, zero_mask
    )


def _segment_piece(lam, p, q, lp, lq, s, zero_mask):
    """1D analogue: ``int lam_i lam_j l^(-2s)`` over ``[p, q]`` with affine ``l``."""
    if lp > lq:
        p, q, lp, lq = q, p, lq, lp
    length = abs(q - p)
    alpha = lam(np.array([[p]]))[0]
    beta = lam(np.array([[q]]))[0] - alpha
    if lp == 0.0:
        alpha = np.where(zero_mask, 0.0, alpha)
    m = _weight_moments(lp, lq - lp, s)
    p0 = np.outer(alpha, alpha)
    p1 = np.outer(alpha, beta) + np.outer(beta, alpha)
    p2 = np.outer(beta, beta)
    coef = np.stack([p0, p1, p2, np.zeros_like(p0)], axis=-1)
    return length * _combine(coef, m)


def _poly_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _dedupe_lines(rows: np.ndarray) -> np.ndarray:
    lines = []
    for row in rows:
        if not any(np.allclose(row, k, rtol=0.0, atol=1e-12) for k in lines):
            lines.append(row)
    return np.array(lines).reshape(-1, rows.shape[1])


def _min_of_lines(parent: np.ndarray, X: np.ndarray, lines: np.ndarray, s: float, snap: float,
                  measure: float) -> np.ndarray:
    """``int lam_i lam_j (min_k l_k)^(-2s)`` over the simplex ``X`` inside element ``parent``.

    ``X`` is clipped into the convex pieces where one line attains the
    minimum; each piece is fanned into triangles on which the weight is
    affine and integrated exactly.
    """
    g, h = lines[:, :-1], lines[:, -1]
    lam = _Element(parent)
    kdim = parent.shape[0]
    out = np.zeros((kdim, kdim))
    for k in range(len(lines)):
        zero = np.abs(parent @ g[k] + h[k]) > snap
        piece = X
        for j in range(len(lines)):
            if j != k:
                piece = _clip(piece, g[k] - g[j], h[k] - h[j])
        if X.shape[1] == 1:
            if len(piece) < 2:
                continue
            lo, hi = float(piece.min()), float(piece.max())
            if hi - lo <= 1e-14 * measure:
                continue
            lv = [g[k, 0] * lo + h[k], g[k, 0] * hi + h[k]]
            lv = [0.0 if abs(x) <= snap else max(x, 0.0) for x in lv]
            out += _segment_piece(lam, lo, hi, lv[0], lv[1], s, zero)
            continue
        if len(piece) < 3 or _poly_area(piece) <= 1e-14 * measure:
            continue
        lvals = piece @ g[k] + h[k]
        lvals[np.abs(lvals) <= snap] = 0.0
        lvals = np.maximum(lvals, 0.0)
        if lvals.max() == 0.0:  # sliver within rounding of the boundary line
            continue
        for i in range(1, len(piece) - 1):
            idx = [0, i, i + 1]
            if _poly_area(piece[idx]) <= 1e-12 * measure or lvals[idx].max() == 0.0:
                continue
            out += _triangle_piece(lam, piece[idx], lvals[idx], s, zero)
    return out


def weighted_mass_exact(mesh: Mesh, s: float) -> np.ndarray:
    """Full ``W_ij = int phi_i phi_j dist^(-2s)`` on a convex domain.

    Entries coupling two boundary vertices are ``inf`` when ``s >= 1/2``.
    """
    s = check_order(s)
    lines = _distance_lines(mesh)
    coords = mesh.vertices[mesh.elements]
    scale = float(np.abs(mesh.vertices).max()) + float(np.ptp(mesh.vertices))
    snap = 1e-12 * scale
    local = np.zeros((mesh.n_elements, mesh.dim + 1, mesh.dim + 1))
    with np.errstate(over="ignore", divide="ignore"):
        for e in range(mesh.n_elements):
            local[e] = _min_of_lines(coords[e], coords[e], lines, s, snap, float(mesh.measures[e]))
    with np.errstate(invalid="ignore"):
        return scatter_dense(mesh.n_vertices, mesh.elements, local)


# -- weighted mass: graded subdivision -------------------------------------------


def _affine_leaf(mesh: Mesh, parent: np.ndarray, X: np.ndarray, dv: np.ndarray, s: float) -> np.ndarray:
    """Exact element matrix of a leaf on which the distance is affine."""
    lam = _Element(parent)
    scale = float(np.abs(parent).max()) + float(np.ptp(parent))
    snap = 1e-12 * scale
    lv = np.where(np.abs(dv) <= snap, 0.0, np.maximum(dv, 0.0))
    # affine extension of the distance to the parent vertices: those off the
    # zero level must get exactly vanishing barycentrics on it
    coef = np.linalg.solve(np.column_stack([X, np.ones(len(X))]), lv)
    off = np.abs(np.column_stack([parent, np.ones(len(parent))]) @ coef) > snap
    if mesh.dim == 1:
        return _segment_piece(lam, float(X[0, 0]), float(X[1, 0]), lv[0], lv[1], s, off)
    return _triangle_piece(lam, X, lv, s, off)


def _local_lines(mesh: Mesh, facet_lines, X: np.ndarray, radius: float):
    """Lines of the facets within ``radius`` of ``X`` if their minimum is the distance on ``X``."""
    lines, a, b = facet_lines
    c = X.mean(axis=0)
    if mesh.dim == 1:
        near = np.ones(len(lines), dtype=bool)
    else:
        near = point_segment_distance(c[None, None, :], a[None], b[None])[0] <= radius * (1.0 + 1e-9)
    cand = _dedupe_lines(lines[near])
    bary, _ = simplex_rule(mesh.dim, 3)
    pts = np.concatenate([X, bary @ X])
    model = np.min(pts @ cand[:, :-1].T + cand[:, -1], axis=1)
    diam = float(np.max(np.linalg.norm(X[:, None] - X[None], axis=-1)))
    if np.abs(model - mesh.boundary_distance(pts)).max() > 1e-12 * diam:
        return None
    return cand


def _graded_local(mesh: Mesh, s: float, depth: int, order: int) -> np.ndarray:
    """Element matrices with sub-simplices refined toward the boundary ``depth`` times.

    A sub-simplex is a leaf once the distance is affine on it (integrated by
    exact moments, which handles the boundary singularity) or once it is
    smooth and at least one diameter away from the boundary (Gauss rule).
    """
    from .slobodeckij import _child_maps

    dim = mesh.dim
    k = dim + 1
    coords = mesh.vertices[mesh.elements]
    children = _child_maps(dim)
    convex = is_convex(mesh)
    eid = np.arange(mesh.n_elements)
    B = np.broadcast_to(np.eye(k), (mesh.n_elements, k, k)).copy()
    leaves_e, leaves_b = [], []
    local = np.zeros((mesh.n_elements, k, k))
    facet_lines = _facet_lines(mesh)
    snap = 1e-12 * (float(np.abs(mesh.vertices).max()) + float(np.ptp(mesh.vertices)))
    with np.errstate(over="ignore", divide="ignore"):
        for level in range(depth + 1):
            X = B @ coords[eid]
            diam = np.max(np.linalg.norm(X[:, :, None, :] - X[:, None, :, :], axis=-1), axis=(1, 2))
            dv = mesh.boundary_distance(X.reshape(-1, dim)).reshape(len(X), k)
            dc = mesh.boundary_distance(X.mean(axis=1))
            # the distance is smooth on a leaf only away from the boundary and
            # from the kinks where the nearest boundary piece changes
            bend = np.abs(dc - dv.mean(axis=1))
            dmin = dv.min(axis=1)
            affine = bend <= 1e-12 * diam
            smooth = affine.copy()
            if not convex:  # curved distance near re-entrant corners
                smooth |= bend * dmin <= 0.05 * diam**2
            far = (dmin >= diam) & smooth
            near = affine & ~far
            for i in np.flatnonzero(near):
                local[eid[i]] += _affine_leaf(mesh, coords[eid[i]], X[i], dv[i], s)
            # leaves touching the boundary at a convex corner: the distance is
            # the minimum of the lines of the nearby facets
            for i in np.flatnonzero(~affine & (dmin <= snap)):
                lines = _local_lines(mesh, facet_lines, X[i], dc[i] + diam[i])
                if lines is not None:
                    measure = abs(float(simplex_measures(X[i][None])[0]))
                    local[eid[i]] += _min_of_lines(coords[eid[i]], X[i], lines, s, snap, measure)
                    near[i] = True
            done = far | near
            if level == depth:
                done = ~near
                leaves_e.append(eid[done])
                leaves_b.append(B[done])
                break
            leaves_e.append(eid[far])
            leaves_b.append(B[far])
            keep = ~done
            if not keep.any():
                break
            eid = np.repeat(eid[keep], len(children))
            B = np.einsum("cij,pjk->pcik", children, B[keep]).reshape(-1, k, k)
    eid = np.concatenate(leaves_e)
    B = np.concatenate(leaves_b)
    if len(eid) == 0:
        return local
    bary, w = simplex_rule(dim, order)
    lam = np.einsum("qi,lij->lqj", bary, B)  # parent barycentrics at the points
    pts = np.einsum("lqj,ljd->lqd", lam, coords[eid])
    dist = mesh.boundary_distance(pts.reshape(-1, dim)).reshape(pts.shape[:2])
    meas = mesh.measures[eid] * np.abs(np.linalg.det(B))
    wq = meas[:, None] * w[None, :] * dist ** (-2.0 * s)
    contrib = np.einsum("lq,lqi,lqj->lij", wq, lam, lam)
    np.add.at(local, eid, contrib)
    return local


def weighted_mass_graded(
    mesh: Mesh, s: float, dofs: np.ndarray | None = None, tol: float = 1e-6,
    order: int = 6, start_depth: int = 2, max_depth: int = 12,
) -> tuple[np.ndarray, float, int]:
    """Weighted mass by graded subdivision.

    The subdivision depth grows one level at a time until two consecutive
    levels agree to ``tol`` (relative, max entry on ``dofs``).
    Returns ``(matrix, last_change, depth)``.
    """
    s = check_order(s)
    idx = np.arange(mesh.n_vertices) if dofs is None else np.asarray(dofs)
    if len(idx) == 0:
        return np.zeros((0, 0)), 0.0, start_depth

    def block(depth):
        W = scatter_dense(mesh.n_vertices, mesh.elements, _graded_local(mesh, s, depth, order))
        return W[np.ix_(idx, idx)]

    prev = block(start_depth)
    change = math.inf
    depth = start_depth
    while depth < max_depth:
        depth += 1
        cur = block(depth)
        change = float(np.abs(cur - prev).max() / max(np.abs(cur).max(), 1e-300))
        prev = cur
        if change <= tol:
            break
    return prev, change, depth


def weighted_mass_form(
    mesh: Mesh, s: float, method: str = "auto", tol: float = 1e-6
) -> QuadraticForm:
    """Form of ``||v / dist^s||_0^2``.

    For ``s >= 1/2`` the form lives on the interior vertices only (functions
    with nonzero boundary values make the term infinite).  ``method`` is
    ``exact`` (convex domains), ``graded`` or ``auto``.
    """
    s = check_order(s)
    convex = is_convex(mesh)
    if method == "auto":
        method = "exact" if convex else "graded"
    restricted = s >= 0.5
    dofs = mesh.interior_vertices if restricted else None
    if restricted and len(dofs) == 0:
        raise FormError("mesh has no interior vertices")
    warnings = []
    if method == "exact":
        if not convex:
            raise ParameterError("the exact weighted mass needs a convex domain")
        W = weighted_mass_exact(mesh, s)
        if restricted:
            W = W[np.ix_(dofs, dofs)]
    elif method == "graded":
        W, change, depth = weighted_mass_graded(mesh, s, dofs, tol=tol)
        if change > tol:
            warnings.append(
                f"graded weighted mass not converged: change {change:.3g} at depth {depth}"
            )
    else:
        raise ParameterError(f"unknown weighted mass method {method!r}")
    W = 0.5 * (W + W.T)
    return QuadraticForm(
        W, "weighted_mass", mesh.n_vertices, s=s, dofs=dofs, warnings=tuple(warnings)
    )


def tilde_form(
    mesh: Mesh, s: float, slobodeckij: QuadraticForm | None = None,
    weighted: QuadraticForm | None = None, spec: QuadratureSpec | None = None,
) -> QuadraticForm:
    """Form of ``||v||_{~,s}^2 = |v|_s^2 + ||v / dist^s||_0^2``."""
    s = check_order(s)
    S = slobodeckij if slobodeckij is not None else assemble_slobodeckij(mesh, s, spec)
    W = weighted if weighted is not None else weighted_mass_form(mesh, s)
    S_block = S.matrix if W.dofs is None else S.matrix[np.ix_(W.dofs, W.dofs)]
    return QuadraticForm(
        S_block + W.matrix, "tilde", mesh.n_vertices, s=s, dofs=W.dofs,
        warnings=S.warnings + W.warnings,
    )


def tilde_ss_norm(v, mesh: Mesh, s: float, spec: QuadratureSpec | None = None) -> float:
    """Squared tilde norm ``|v|_s^2 + ||v / dist^s||_0^2`` of a P1 function."""
    s = check_order(s)
    x = coefficients_of(v)
    if s >= 0.5:
        scale = max(1.0, float(np.abs(x).max()))
        if np.any(np.abs(x[mesh.boundary_vertices]) > 1e-12 * scale):
            raise FormError("weighted term divergent: nonzero boundary values with s >= 1/2")
    if not np.any(x):
        return 0.0
    suite = suite_for(mesh)
    if spec is not None and spec != suite.spec:
        return tilde_form(mesh, s, spec=spec).value(x)
    return suite.norm_tilde(x, s)


# -- Poincare-Friedrichs constants and discrete estimates -------------------------


def pf_ss_constant(metrics: DomainMetrics, s: float, n: int | None = None) -> float:
    """``|O|^(-1/2) max{1, 2^(-1/2) D^(n/2 + s)}``."""
    s = check_order(s)
    n = metrics.dim if n is None else n
    return metrics.area**-0.5 * max(1.0, 2.0**-0.5 * metrics.diameter ** (n / 2.0 + s))


class NormSuite:
    """All forms for one mesh, assembled on first use and cached per ``s``."""

    def __init__(self, mesh: Mesh, spec: QuadratureSpec | None = None, threads=None,
                 backend: str = "jacobi", max_vertices: int | None = None):
        self.mesh = mesh
        self.spec = spec or QuadratureSpec()
        self.threads = threads
        self.backend = backend
        self.max_vertices = max_vertices
        self._cache: dict = {}

    def _get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @cached_property
    def metrics(self) -> DomainMetrics:
        return domain_metrics(self.mesh)

    @cached_property
    def mass(self) -> QuadraticForm:
        return assemble_mass(self.mesh)

    @cached_property
    def stiffness(self) -> QuadraticForm:
        return assemble_stiffness(self.mesh)

    @cached_property
    def stiffness_dirichlet(self) -> QuadraticForm:
        return assemble_stiffness(self.mesh, dirichlet=True)

    def _eig_kwargs(self):
        kw = {"backend": self.backend}
        if self.max_vertices is not None:
            kw["max_vertices"] = self.max_vertices
        return kw

    @cached_property
    def neumann(self):
        return eig(self.mass, self.stiffness, **self._eig_kwargs())

    @cached_property
    def dirichlet(self):
        return eig(self.mass, self.stiffness_dirichlet, dirichlet=True, **self._eig_kwargs())

    def slobodeckij(self, s: float) -> QuadraticForm:
        return self._get(
            ("S", s), lambda: assemble_slobodeckij(self.mesh, s, self.spec, self.threads)
        )

    def quotient(self, s: float) -> QuadraticForm:
        return self._get(
            ("Q", s),
            lambda: quotient_form(self.mesh, s, slobodeckij=self.slobodeckij(s), mass=self.mass),
        )

    def interpolation(self, s: float) -> QuadraticForm:
        return self._get(("I", s), lambda: interpolation_form(self.neumann, s))

    def interpolation_h10(self, s: float) -> QuadraticForm:
        return self._get(("I0", s), lambda: interpolation_form(self.dirichlet, s))

    def weighted_mass(self, s: float) -> QuadraticForm:
        return self._get(("W", s), lambda: weighted_mass_form(self.mesh, s))

    def tilde(self, s: float) -> QuadraticForm:
        return self._get(
            ("T", s), lambda: tilde_form(self.mesh, s, self.slobodeckij(s), self.weighted_mass(s))
        )

    # squared values of a function
    def l2_sq(self, v) -> float:
        return self.mass.value(v)

    def shifted_l2_sq(self, v) -> float:
        return shifted_l2_sq(v, self.mass)

    def integral(self, v) -> float:
        return integral(v, self.mass)

    def semi_ss(self, v, s) -> float:
        return self.slobodeckij(s).value(v)

    def semi_interp(self, v, s) -> float:
        return self.interpolation(s).value(v)

    def semi_inf(self, v, s) -> float:
        return self.quotient(s).value(v)

    def norm_h10(self, v, s) -> float:
        return self.interpolation_h10(s).value(v)

    def norm_tilde(self, v, s) -> float:
        return self.tilde(s).value(v)

    def in_dirichlet_space(self, v) -> bool:
        x = coefficients_of(v)
        scale = max(1.0, float(np.abs(x).max()))
        return bool(np.all(np.abs(x[self.mesh.boundary_vertices]) <= 1e-12 * scale))


_SUITES: "weakref.WeakKeyDictionary[Mesh, NormSuite]" = weakref.WeakKeyDictionary()


def suite_for(mesh_or_suite) -> NormSuite:
    """The cached :class:`NormSuite` of a mesh (or the suite itself)."""
    if isinstance(mesh_or_suite, NormSuite):
        return mesh_or_suite
    suite = _SUITES.get(mesh_or_suite)
    if suite is None:
        suite = NormSuite(mesh_or_suite)
        _SUITES[mesh_or_suite] = suite
    return suite


@dataclass(frozen=True)
class EquivalenceConstants:
    """Constants of one reference mesh.

    ``k_h``, ``K_h`` and ``C_pf_i_h`` are discrete estimates (extremal
    generalized eigenvalues on the P1 space); ``C_pf_ss`` is the explicit
    formula.  ``C_pf_i_lower`` is the lower end of the bracket that comes
    from replacing ``(a + b)^2`` by ``a^2 + b^2``.  ``K_factor`` records a
    deliberate rescaling of ``K_h`` (fault injection).
    """

    s: float
    k_h: float
    K_h: float
    C_pf_ss: float
    C_pf_i_h: float
    C_pf_i_lower: float
    mesh_hash: str
    n_vertices: int
    approximate: bool = False
    K_factor: float = 1.0
    witnesses: dict = field(default_factory=dict, compare=False, repr=False)

    def with_K_factor(self, factor: float) -> "EquivalenceConstants":
        return replace(self, K_h=self.K_h / self.K_factor * factor, K_factor=factor)

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "k_h": self.k_h,
            "K_h": self.K_h,
            "K_factor": self.K_factor,
            "C_pf_ss": self.C_pf_ss,
            "C_pf_i_h": self.C_pf_i_h,
            "C_pf_i_lower": self.C_pf_i_lower,
            "mesh_hash": self.mesh_hash,
            "n_vertices": self.n_vertices,
            "flags": {
                "metrics_approximate": self.approximate,
                "k_h": "discrete estimate",
                "K_h": "discrete estimate" if self.K_factor == 1.0
                else f"discrete estimate times {self.K_factor}",
                "C_pf_i_h": "discrete estimate, quadratic surrogate (upper end of the sqrt(2) bracket)",
                "C_pf_ss": "explicit formula",
            },
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EquivalenceConstants":
        d = json.loads(text)
        return cls(
            d["s"], d["k_h"], d["K_h"], d["C_pf_ss"], d["C_pf_i_h"], d["C_pf_i_lower"],
            d["mesh_hash"], d["n_vertices"], d["flags"]["metrics_approximate"],
            d.get("K_factor", 1.0),
        )


def pencil_extremes(A: np.ndarray, B: np.ndarray, backend: str = "jacobi"):
    """Smallest and largest ``lambda`` of ``A x = lambda B x`` with eigenvectors."""
    try:
        lam, X = generalized_eigh(A, B, backend=backend)
    except SpectralError as exc:
        raise SpectralError(f"indefinite pencil: {exc}") from exc
    if lam[0] <= 0.0:
        raise SpectralError("indefinite pencil: nonpositive eigenvalue")
    return float(lam[0]), float(lam[-1]), X[:, 0], X[:, -1]


def estimate_equivalence_constants(
    mesh_or_suite, s: float, backend: str | None = None
) -> EquivalenceConstants:
    """Discrete ``k_h``, ``K_h``, ``C_pf_i_h`` and the explicit ``C_pf_ss``.

    ``A1 = M + S`` is the Slobodeckij norm and ``A2 = M + Q_I`` stands in for
    the full interpolation norm.  The PF-I constant comes from the pencil
    ``(M, Q_I + w w^T)`` with ``w`` the integration vector.
    """
    s = check_order(s)
    suite = suite_for(mesh_or_suite)
    backend = backend or suite.backend
    M = suite.mass.matrix
    Q = suite.interpolation(s).matrix
    lo, hi, x_lo, x_hi = pencil_extremes(M + suite.slobodeckij(s).matrix, M + Q, backend)
    w = M.sum(axis=0)
    _, pf, _, x_pf = pencil_extremes(M, Q + np.outer(w, w), backend)
    c_pf = math.sqrt(pf)
    metrics = suite.metrics
    return EquivalenceConstants(
        s=s,
        k_h=math.sqrt(lo),
        K_h=math.sqrt(hi),
        C_pf_ss=pf_ss_constant(metrics, s),
        C_pf_i_h=c_pf,
        C_pf_i_lower=c_pf / math.sqrt(2.0),
        mesh_hash=suite.mesh.mesh_hash,
        n_vertices=suite.mesh.n_vertices,
        approximate=metrics.approximate,
        witnesses={"k_h": x_lo, "K_h": x_hi, "C_pf_i_h": x_pf},
    )


def check_pf_ss(v, mesh_or_suite, s: float, rtol: float = 1e-10, **meta) -> BoundReport:
    """``||v||_0 <= C_PF,SS (|v|_s + |int v|)`` with the explicit constant."""
    suite = suite_for(mesh_or_suite)
    C = pf_ss_constant(suite.metrics, s)
    lhs = math.sqrt(max(suite.l2_sq(v), 0.0))
    rhs = C * (math.sqrt(max(suite.semi_ss(v, s), 0.0)) + abs(suite.integral(v)))
    return make_report(
        "pf_ss", lhs, rhs, rtol, {"C_pf_ss": {"value": C, "source": "explicit formula"}},
        s=s, **meta,
    )


def check_pf_interp(
    v, mesh_or_suite, s: float, constants: EquivalenceConstants, rtol: float = 1e-10, **meta
) -> BoundReport:
    """``||v||_0 <= C_PF,I (|v|_{L2,H1,s} + |int v|)`` with the discrete constant."""
    suite = suite_for(mesh_or_suite)
    C = constants.C_pf_i_h
    lhs = math.sqrt(max(suite.l2_sq(v), 0.0))
    rhs = C * (math.sqrt(max(suite.semi_interp(v, s), 0.0)) + abs(suite.integral(v)))
    return make_report(
        "pf_interp", lhs, rhs, rtol, {"C_pf_i_h": {"value": C, "source": "discrete estimate"}},
        s=s, **meta,
    )
