"""Assembly of the Sobolev-Slobodeckij semi-norm form.

The form is ``S_ij = int int (phi_i(x)-phi_i(y)) (phi_j(x)-phi_j(y)) |x-y|^(-n-2s)``.
The double integral is split into element pairs.  Pairs that share
vertices are handled in relative (l1-polar) coordinates, where the radial
integral is done in closed form and only a smooth angular integral is left
for Gauss quadrature.  Disjoint pairs use tensor Gauss rules, with
composite subdivision when the pair is close compared to its size.

Element-pair contributions are computed in batches; a batch result is a set
of local matrices plus their dof maps, and all batches are scattered into the
dense matrix in one fixed order.  The result does not depend on the number
of worker threads.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import roots_legendre

from .fespace import QuadraticForm, assemble_mass, scatter_dense
from .geometry import Mesh, simplex_diameters, simplex_measures

S_SAFE_RANGE = (0.05, 0.95)


class ParameterError(ValueError):
    """Raised for an order ``s`` outside ``(0, 1)`` or invalid quadrature settings."""


def check_order(s: float) -> float:
    s = float(s)
    if not 0.0 < s < 1.0:
        raise ParameterError(f"order s must lie in (0, 1), got {s}")
    return s


class PairClass(enum.IntEnum):
    DISJOINT = 0
    VERTEX_TOUCHING = 1
    EDGE_TOUCHING = 2
    IDENTICAL = 3


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings.

    ``gauss_order`` points per direction on disjoint pairs, ``duffy_order``
    points per direction for the angular integrals of touching pairs, and
    ``near_field_threshold`` the distance/diameter ratio below which disjoint
    pairs are subdivided.  With ``check_convergence`` the form is assembled
    a second time with raised orders and a warning is attached when entries
    move by more than ``convergence_tol`` (relative to the largest entry).
    """

    gauss_order: int = 6
    duffy_order: int = 8
    near_field_threshold: float = 1.5
    max_subdivision: int = 8
    check_convergence: bool = False
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.gauss_order < 2:
            raise ParameterError("gauss_order must be >= 2")
        if self.duffy_order < 4:
            raise ParameterError("duffy_order must be >= 4")
        if not 0.0 < self.near_field_threshold <= 10.0:
            raise ParameterError("near_field_threshold must lie in (0, 10]")
        if self.max_subdivision < 0:
            raise ParameterError("max_subdivision must be nonnegative")

    def raised(self, by: int = 4) -> "QuadratureSpec":
        return replace(
            self, gauss_order=self.gauss_order + by, duffy_order=self.duffy_order + by,
            check_convergence=False,
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("FRACNORM_THREADS", "1")))
    except ValueError:
        return 1


# -- reference rules -------------------------------------------------------


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def simplex_rule(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(q, dim+1)`` and weights summing to one."""
    t, w = gauss01(n)
    if dim == 1:
        return np.column_stack([1.0 - t, t]), w.copy()
    t1, t2 = np.meshgrid(t, t, indexing="ij")
    w12 = np.outer(w, w) * (1.0 - t1)
    u = t1.ravel()
    v = (t2 * (1.0 - t1)).ravel()
    return np.column_stack([1.0 - u - v, u, v]), 2.0 * w12.ravel()


def triangle_points(corners: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on a triangle given by three 2D corners; weights sum to its area."""
    bary, w = simplex_rule(2, n)
    pts = bary @ corners
    area = 0.5 * abs(
        (corners[1, 0] - corners[0, 0]) * (corners[2, 1] - corners[0, 1])
        - (corners[1, 1] - corners[0, 1]) * (corners[2, 0] - corners[0, 0])
    )
    return pts, w * area


@lru_cache(maxsize=None)
def edge_pair_rule(n: int, depth: int = 1):
    """Angular rule for triangles sharing an edge.

    Returns points ``(w_d, w_1, w_2)`` on the l1 unit sphere (``w_1, w_2 >= 0``)
    and weights, split along the kinks of the radial range function and then
    refined uniformly ``depth`` times.  The integrand is smooth there but has
    complex singularities close to the real domain, the closer the flatter the
    two triangles are; each refinement gains roughly three digits.
    """
    pieces = [
        (+1, [(0, 0), (1, 0), (0.5, 0.5)]),
        (+1, [(0, 0), (0.5, 0.5), (0, 0.5)]),
        (+1, [(0, 0.5), (0.5, 0.5), (0, 1)]),
        (-1, [(0, 0), (0.5, 0), (0.5, 0.5)]),
        (-1, [(0, 0), (0.5, 0.5), (0, 1)]),
        (-1, [(0.5, 0), (1, 0), (0.5, 0.5)]),
    ]
    children = _child_maps(2)
    pts, wts = [], []
    for sign, tri in pieces:
        tris = [np.array(tri, dtype=float)]
        for _ in range(depth):
            tris = [child @ T for T in tris for child in children]
        for T in tris:
            p, w = triangle_points(T, n)
            wd = sign * (1.0 - p[:, 0] - p[:, 1])
            pts.append(np.column_stack([wd, p[:, 0], p[:, 1]]))
            wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


def edge_pair_depth(e: np.ndarray, f1: np.ndarray, f2: np.ndarray, max_depth: int = 4) -> np.ndarray:
    """Refinement depth of :func:`edge_pair_rule` from how flat a pair is.

    ``e`` is the shared edge and ``f1``, ``f2`` the edges to the opposite
    vertices.  The indicator is ``min r / max r`` of ``|z(omega)|`` on a
    coarse angular rule: about 1/3 on isotropic meshes, smaller the closer
    the near-singularity of the integrand.  One extra level per halving.
    """
    omega, _ = edge_pair_rule(4, 0)
    z = (
        omega[None, :, 0, None] * e[:, None, :]
        + omega[None, :, 1, None] * f1[:, None, :]
        - omega[None, :, 2, None] * f2[:, None, :]
    )
    r = np.linalg.norm(z, axis=2)
    rho = r.min(axis=1) / r.max(axis=1)
    extra = np.ceil(np.log2(0.3 / rho))
    return np.clip(1 + extra, 1, max_depth).astype(int)


@lru_cache(maxsize=None)
def vertex_pair_rule(n: int):
    """Rule on the 3-simplex ``{w >= 0, sum w = 1}`` for triangles sharing a vertex.

    Parametrized by ``(sigma, alpha, beta)`` with Jacobian
    ``sigma (1 - sigma)``; composite with two panels per direction on top
    of the split at ``sigma = 1/2``.
    """
    g, wg = gauss01(n)
    # two panels per direction: distorted neighbours make the integrand
    # nearly singular close to the panel corners
    t = np.concatenate([0.5 * g, 0.5 + 0.5 * g])
    w = np.concatenate([0.5 * wg, 0.5 * wg])
    sig = np.concatenate([0.5 * t, 0.5 + 0.5 * t])
    wsig = np.concatenate([0.5 * w, 0.5 * w])
    S, A, B = np.meshgrid(sig, t, t, indexing="ij")
    W = np.einsum("i,j,k->ijk", wsig, w, w) * S * (1.0 - S)
    S, A, B, W = S.ravel(), A.ravel(), B.ravel(), W.ravel()
    omega = np.column_stack([S * A, S * (1 - A), (1 - S) * B, (1 - S) * (1 - B)])
    return omega, W


# -- pair classification ---------------------------------------------------


def classify_pairs(mesh: Mesh) -> dict[PairClass, np.ndarray]:
    """Unordered element pairs ``(i, j)``, ``i <= j``, grouped by shared-vertex count."""
    E = mesh.n_elements
    inc = np.zeros((E, mesh.n_vertices), dtype=np.int32)
    np.put_along_axis(inc, mesh.elements, 1, axis=1)
    shared = inc @ inc.T
    i, j = np.triu_indices(E, k=1)
    cnt = shared[i, j]
    out = {PairClass.IDENTICAL: np.column_stack([np.arange(E), np.arange(E)])}
    out[PairClass.DISJOINT] = np.column_stack([i[cnt == 0], j[cnt == 0]])
    out[PairClass.VERTEX_TOUCHING] = np.column_stack([i[cnt == 1], j[cnt == 1]])
    if mesh.dim == 2:
        out[PairClass.EDGE_TOUCHING] = np.column_stack([i[cnt == 2], j[cnt == 2]])
    return out


def pair_class(mesh: Mesh, i: int, j: int) -> PairClass:
    if i == j:
        return PairClass.IDENTICAL
    n = len(set(mesh.elements[i]) & set(mesh.elements[j]))
    return PairClass(n)


# -- batch evaluation helpers ----------------------------------------------


def _chunks(n: int, size: int):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _run(fn, ranges, threads: int):
    if threads <= 1 or len(ranges) <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def _split_shared(E1: np.ndarray, E2: np.ndarray):
    """For each pair, boolean masks of shared local vertices in both elements."""
    match = E1[:, :, None] == E2[:, None, :]
    return match.any(axis=2), match.any(axis=1)


def _ordered_locals(E: np.ndarray, shared: np.ndarray):
    """Local vertex indices sorted so that shared vertices come first (stable)."""
    return np.argsort(~shared, axis=1, kind="stable")


# -- 1D ----------------------------------------------------------------------


def _identical_1d(mesh: Mesh, s: float):
    h = mesh.measures
    c = 2.0 * h ** (1.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s))
    local = c[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])[None]
    return mesh.elements, local


def _touching_1d(mesh: Mesh, s: float, pairs: np.ndarray, spec: QuadratureSpec):
    E1, E2 = mesh.elements[pairs[:, 0]], mesh.elements[pairs[:, 1]]
    sh1, sh2 = _split_shared(E1, E2)
    o1, o2 = _ordered_locals(E1, sh1), _ordered_locals(E2, sh2)
    rows = np.arange(len(pairs))
    A = E1[rows, o1[:, 0]]
    X1 = E1[rows, o1[:, 1]]
    X2 = E2[rows, o2[:, 1]]
    h1 = mesh.measures[pairs[:, 0]]
    h2 = mesh.measures[pairs[:, 1]]
    t, w = gauss01(spec.duffy_order)
    # panels in u = distance from the end of the shorter element; the range
    # tau h1 + (1 - tau) h2 doubles from one breakpoint to the next, so
    # strongly graded neighbours keep the accuracy of equal ones
    hmin, hmax = np.minimum(h1, h2), np.maximum(h1, h2)
    ratio = hmax / hmin
    levels = int(np.ceil(np.log2(ratio.max()))) + 1 if ratio.max() > 1.0 + 1e-12 else 0
    grow = (2.0 ** np.arange(1, levels + 1) - 1.0)[None, :] * (hmin / np.maximum(hmax - hmin, 1e-300))[:, None]
    quarters = np.tile([0.0, 0.25, 0.5, 0.75, 1.0], (len(pairs), 1))
    brk = np.sort(np.column_stack([quarters, np.minimum(grow, 1.0)]), axis=1)
    lo, hi = brk[:, :-1], brk[:, 1:]
    u = (lo[:, :, None] + (hi - lo)[:, :, None] * t[None, None, :]).reshape(len(pairs), -1)
    wt = ((hi - lo)[:, :, None] * w[None, None, :]).reshape(len(pairs), -1)
    tau = np.where((h1 <= h2)[:, None], 1.0 - u, u)
    m = np.maximum(tau, 1.0 - tau)
    delta = np.stack([1.0 - 2.0 * tau, tau, -(1.0 - tau)], axis=-1)  # dofs (A, X1, X2)
    dist = tau * h1[:, None] + (1.0 - tau) * h2[:, None]
    weight = wt * m ** (-(3.0 - 2.0 * s)) * dist ** (-(1.0 + 2.0 * s))
    local = np.einsum("pq,pqi,pqj->pij", weight, delta, delta)
    local *= (2.0 * h1 * h2 / (3.0 - 2.0 * s))[:, None, None]
    return np.column_stack([A, X1, X2]), local


# -- 2D singular pairs --------------------------------------------------------


def _identical_2d(mesh: Mesh, s: float, spec: QuadratureSpec):
    from .fespace import element_gradients

    G = element_gradients(mesh)  # (E, 3, 2)
    phi = np.arctan2(G[:, :, 1], G[:, :, 0])
    brk = np.sort(np.mod(phi + 0.5 * np.pi, np.pi), axis=1)
    lo = brk
    hi = np.column_stack([brk[:, 1], brk[:, 2], brk[:, 0] + np.pi])
    t, w = gauss01(spec.duffy_order)
    theta = lo[:, :, None] + (hi - lo)[:, :, None] * t[None, None, :]
    wth = (hi - lo)[:, :, None] * w[None, None, :]
    theta = theta.reshape(len(G), -1)
    wth = wth.reshape(len(G), -1)
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)  # (E, q, 2)
    proj = np.abs(np.einsum("ekd,eqd->eqk", G, e)).sum(axis=2)
    R = 2.0 / proj
    f = wth * R ** (2.0 - 2.0 * s)
    Mz = 2.0 * np.einsum("eq,eqa,eqb->eab", f, e, e)
    beta = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s) * (4.0 - 2.0 * s))
    Mz *= (mesh.measures * beta)[:, None, None]
    local = np.einsum("eia,eab,ejb->eij", G, Mz, G)
    return mesh.elements, local


def _edge_2d(mesh: Mesh, s: float, pairs: np.ndarray, spec: QuadratureSpec):
    V = mesh.vertices
    E1, E2 = mesh.elements[pairs[:, 0]], mesh.elements[pairs[:, 1]]
    sh1, sh2 = _split_shared(E1, E2)
    o1, o2 = _ordered_locals(E1, sh1), _ordered_locals(E2, sh2)
    rows = np.arange(len(pairs))
    A, B, C1 = (E1[rows, o1[:, k]] for k in range(3))
    C2 = E2[rows, o2[:, 2]]
    e = V[B] - V[A]
    f1 = V[C1] - V[A]
    f2 = V[C2] - V[A]
    depth = edge_pair_depth(e, f1, f2)
    local = np.empty((len(pairs), 4, 4))
    for d in np.unique(depth):
        sel = depth == d
        omega, w = edge_pair_rule(spec.duffy_order, int(d))
        wd, w1, w2 = omega.T
        c = np.maximum(w1, w2 - wd) + np.maximum(0.0, wd)
        delta = np.column_stack([-wd - w1 + w2, wd, w1, -w2])  # dofs (A, B, C1, C2)
        for lo, hi in _chunks(int(sel.sum()), max(1, 2_000_000 // len(w))):
            idx = np.flatnonzero(sel)[lo:hi]
            z = (
                wd[None, :, None] * e[idx, None, :]
                + w1[None, :, None] * f1[idx, None, :]
                - w2[None, :, None] * f2[idx, None, :]
            )
            r = np.linalg.norm(z, axis=2)
            weight = (w * c ** (-(3.0 - 2.0 * s)))[None, :] * r ** (-(2.0 + 2.0 * s))
            local[idx] = np.einsum("pq,qi,qj->pij", weight, delta, delta)
    area1 = mesh.measures[pairs[:, 0]]
    area2 = mesh.measures[pairs[:, 1]]
    pref = 2.0 * 4.0 * area1 * area2 / ((3.0 - 2.0 * s) * (4.0 - 2.0 * s))
    return np.column_stack([A, B, C1, C2]), local * pref[:, None, None]


def _vertex_2d(mesh: Mesh, s: float, pairs: np.ndarray, spec: QuadratureSpec):
    V = mesh.vertices
    E1, E2 = mesh.elements[pairs[:, 0]], mesh.elements[pairs[:, 1]]
    sh1, sh2 = _split_shared(E1, E2)
    o1, o2 = _ordered_locals(E1, sh1), _ordered_locals(E2, sh2)
    rows = np.arange(len(pairs))
    A, B1, C1 = (E1[rows, o1[:, k]] for k in range(3))
    B2, C2 = E2[rows, o2[:, 1]], E2[rows, o2[:, 2]]
    e1, f1 = V[B1] - V[A], V[C1] - V[A]
    e2, f2 = V[B2] - V[A], V[C2] - V[A]
    omega, w = vertex_pair_rule(spec.duffy_order)
    m = np.maximum(omega[:, 0] + omega[:, 1], omega[:, 2] + omega[:, 3])
    delta = np.column_stack(
        [-omega[:, 0] - omega[:, 1] + omega[:, 2] + omega[:, 3],
         omega[:, 0], omega[:, 1], -omega[:, 2], -omega[:, 3]]
    )  # dofs (A, B1, C1, B2, C2)
    z = (
        np.einsum("q,pd->pqd", omega[:, 0], e1)
        + np.einsum("q,pd->pqd", omega[:, 1], f1)
        - np.einsum("q,pd->pqd", omega[:, 2], e2)
        - np.einsum("q,pd->pqd", omega[:, 3], f2)
    )
    r = np.linalg.norm(z, axis=2)
    weight = (w * m ** (-(4.0 - 2.0 * s)))[None, :] * r ** (-(2.0 + 2.0 * s))
    local = np.einsum("pq,qi,qj->pij", weight, delta, delta)
    area1 = mesh.measures[pairs[:, 0]]
    area2 = mesh.measures[pairs[:, 1]]
    pref = 2.0 * 4.0 * area1 * area2 / (4.0 - 2.0 * s)
    return np.column_stack([A, B1, C1, B2, C2]), local * pref[:, None, None]


# -- disjoint pairs ------------------------------------------------------------


def _child_maps(dim: int) -> np.ndarray:
    """Barycentric coordinates of the children of a uniformly refined simplex."""
    if dim == 1:
        return np.array([[[1.0, 0.0], [0.5, 0.5]], [[0.5, 0.5], [0.0, 1.0]]])
    a, b, c = np.eye(3)
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return np.array([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])


def simplex_distance(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Distance between pairs of disjoint simplices ``(P, k, d)``."""
    if X1.shape[-1] == 1:
        lo1, hi1 = X1[..., 0].min(axis=1), X1[..., 0].max(axis=1)
        lo2, hi2 = X2[..., 0].min(axis=1), X2[..., 0].max(axis=1)
        return np.maximum(np.maximum(lo1 - hi2, lo2 - hi1), 0.0)
    from .geometry import point_segment_distance

    best = np.full(len(X1), np.inf)
    edges = [(0, 1), (1, 2), (2, 0)]
    for P, Q in ((X1, X2), (X2, X1)):
        for i, j in edges:
            a, b = Q[:, i, :], Q[:, j, :]
            for k in range(3):
                best = np.minimum(best, point_segment_distance(P[:, k, :], a, b))
    return best


def disjoint_leaves(coords1: np.ndarray, coords2: np.ndarray, threshold: float, max_level: int):
    """Composite subdivision of close disjoint pairs.

    Returns ``(pair_index, B1, B2)`` where ``B1[l]`` holds the barycentric
    coordinates (w.r.t. the parent element) of the vertices of the first
    sub-simplex of leaf ``l``.  A pair is split (larger member first) until
    ``distance >= threshold * max(diam)`` or ``max_level`` is reached.
    """
    P, k, _ = coords1.shape
    dim = k - 1
    children = _child_maps(dim)
    nc = len(children)
    pid = np.arange(P)
    B1 = np.broadcast_to(np.eye(k), (P, k, k)).copy()
    B2 = B1.copy()
    out_p, out_b1, out_b2 = [], [], []
    for level in range(max_level + 1):
        X1 = B1 @ coords1[pid]
        X2 = B2 @ coords2[pid]
        d1, d2 = simplex_diameters(X1), simplex_diameters(X2)
        dist = simplex_distance(X1, X2)
        done = dist >= threshold * np.maximum(d1, d2)
        if level == max_level:
            done[:] = True
        out_p.append(pid[done])
        out_b1.append(B1[done])
        out_b2.append(B2[done])
        keep = ~done
        if not keep.any():
            break
        pid, B1, B2, d1, d2 = pid[keep], B1[keep], B2[keep], d1[keep], d2[keep]
        first = d1 >= d2
        new1 = np.where(first[:, None, None, None], np.einsum("cij,pjk->pcik", children, B1), B1[:, None])
        new2 = np.where(~first[:, None, None, None], np.einsum("cij,pjk->pcik", children, B2), B2[:, None])
        pid = np.repeat(pid, nc)
        B1 = new1.reshape(-1, k, k)
        B2 = new2.reshape(-1, k, k)
    return np.concatenate(out_p), np.concatenate(out_b1), np.concatenate(out_b2)


def _disjoint_block(coords1, coords2, meas1, meas2, B1, B2, s, order):
    """Local ``(L, 2k, 2k)`` matrices of leaf sub-pairs by tensor Gauss rules."""
    k = coords1.shape[1]
    dim = k - 1
    bary, w = simplex_rule(dim, order)
    a = np.einsum("qi,lij->lqj", bary, B1)  # parent barycentrics at the points
    b = np.einsum("qi,lij->lqj", bary, B2)
    # centre each leaf so the expanded distance formula does not cancel badly
    origin = coords1[:, :1, :]
    x = a @ (coords1 - origin)
    y = b @ (coords2 - origin)
    sub1 = meas1 * np.abs(np.linalg.det(B1))
    sub2 = meas2 * np.abs(np.linalg.det(B2))
    xx = np.einsum("lpd,lpd->lp", x, x)
    yy = np.einsum("lqd,lqd->lq", y, y)
    r2 = xx[:, :, None] + yy[:, None, :] - 2.0 * (x @ np.swapaxes(y, 1, 2))
    np.maximum(r2, np.finfo(float).tiny, out=r2)
    W = np.power(r2, -(dim + 2.0 * s) / 2.0, out=r2)
    W *= (sub1[:, None] * w[None, :])[:, :, None]
    W *= (sub2[:, None] * w[None, :])[:, None, :]
    rs = W.sum(axis=2)
    cs = W.sum(axis=1)
    at, bt = np.swapaxes(a, 1, 2), np.swapaxes(b, 1, 2)
    L = np.empty((len(B1), 2 * k, 2 * k))
    L[:, :k, :k] = at @ (rs[:, :, None] * a)
    L[:, k:, k:] = bt @ (cs[:, :, None] * b)
    cross = -(at @ (W @ b))
    L[:, :k, k:] = cross
    L[:, k:, :k] = np.swapaxes(cross, 1, 2)
    return 2.0 * L


def _disjoint(mesh: Mesh, s: float, pairs: np.ndarray, spec: QuadratureSpec, threads: int):
    if len(pairs) == 0:
        k = mesh.dim + 1
        return np.zeros((0, 2 * k), dtype=np.int64), np.zeros((0, 2 * k, 2 * k))
    coords = mesh.vertices[mesh.elements]
    c1, c2 = coords[pairs[:, 0]], coords[pairs[:, 1]]
    pid, B1, B2 = disjoint_leaves(c1, c2, spec.near_field_threshold, spec.max_subdivision)
    order = np.argsort(pid, kind="stable")
    pid, B1, B2 = pid[order], B1[order], B2[order]
    meas = mesh.measures
    q = simplex_rule(mesh.dim, spec.gauss_order)[1].size
    chunk = max(1, 2_000_000 // (q * q))

    def work(lo, hi):
        p = pid[lo:hi]
        return _disjoint_block(
            c1[p], c2[p], meas[pairs[p, 0]], meas[pairs[p, 1]], B1[lo:hi], B2[lo:hi], s,
            spec.gauss_order,
        )

    local = np.concatenate(_run(work, _chunks(len(pid), chunk), threads))
    dof = np.concatenate([mesh.elements[pairs[pid, 0]], mesh.elements[pairs[pid, 1]]], axis=1)
    return dof, local


# -- public assembly -------------------------------------------------------------


def _assemble_matrix(mesh: Mesh, s: float, spec: QuadratureSpec, threads: int) -> np.ndarray:
    pairs = classify_pairs(mesh)
    n = mesh.n_vertices
    blocks = []
    if mesh.dim == 1:
        blocks.append(_identical_1d(mesh, s))
        if len(pairs[PairClass.VERTEX_TOUCHING]):
            blocks.append(_touching_1d(mesh, s, pairs[PairClass.VERTEX_TOUCHING], spec))
    else:
        blocks.append(_identical_2d(mesh, s, spec))
        if len(pairs[PairClass.EDGE_TOUCHING]):
            blocks.append(_edge_2d(mesh, s, pairs[PairClass.EDGE_TOUCHING], spec))
        if len(pairs[PairClass.VERTEX_TOUCHING]):
            blocks.append(_vertex_2d(mesh, s, pairs[PairClass.VERTEX_TOUCHING], spec))
    blocks.append(_disjoint(mesh, s, pairs[PairClass.DISJOINT], spec, threads))
    S = np.zeros((n, n))
    for dof, local in blocks:
        if len(dof):
            S += scatter_dense(n, dof, local)
    return 0.5 * (S + S.T)


def assemble_slobodeckij(
    mesh: Mesh, s: float, spec: QuadratureSpec | None = None, threads: int | None = None
) -> QuadraticForm:
    """Form of ``|v|_{s,O}^2`` on the P1 space of ``mesh``."""
    s = check_order(s)
    spec = spec or QuadratureSpec()
    threads = default_threads() if threads is None else max(1, int(threads))
    S = _assemble_matrix(mesh, s, spec, threads)
    warnings = []
    if not S_SAFE_RANGE[0] <= s <= S_SAFE_RANGE[1]:
        warnings.append(
            f"s = {s} lies outside [{S_SAFE_RANGE[0]}, {S_SAFE_RANGE[1]}]: expect reduced accuracy"
        )
    if spec.check_convergence:
        S2 = _assemble_matrix(mesh, s, spec.raised(), threads)
        change = float(np.abs(S2 - S).max() / np.abs(S2).max())
        if change > spec.convergence_tol:
            warnings.append(
                f"quadrature not converged: raising orders changes entries by {change:.3g} (relative)"
            )
    return QuadraticForm(S, "slobodeckij", mesh.n_vertices, s=s, semi=True, warnings=tuple(warnings))


def quotient_form(
    mesh: Mesh, s: float, spec: QuadratureSpec | None = None, slobodeckij: QuadraticForm | None = None,
    mass: QuadraticForm | None = None,
) -> QuadraticForm:
    """Form of ``|v|_{s,O,inf}^2 = |v|_s^2 + ||v - mean(v)||_0^2``."""
    s = check_order(s)
    S = slobodeckij if slobodeckij is not None else assemble_slobodeckij(mesh, s, spec)
    M = mass if mass is not None else assemble_mass(mesh)
    w = M.matrix.sum(axis=0)
    Q = S.matrix + M.matrix - np.outer(w, w) / w.sum()
    return QuadraticForm(Q, "quotient", mesh.n_vertices, s=s, semi=True, warnings=S.warnings)


# -- exact 1D oracle ---------------------------------------------------------------


def _mp_antiderivative_integral(p: int, k: int, gamma, c, H, log_branch: bool):
    """``int_0^H w^p A(c + w) dw`` with ``A(R) = R^gamma / gamma`` or ``log R``."""
    mp = mpmath
    if c == 0:
        if log_branch:
            return H ** (p + 1) * (mp.log(H) / (p + 1) - mp.mpf(1) / (p + 1) ** 2)
        return H ** (p + gamma + 1) / ((p + gamma + 1) * gamma)
    total = mp.mpf(0)
    lo, hi = c, c + H
    for l in range(p + 1):
        coeff = mp.binomial(p, l) * (-c) ** (p - l)
        if log_branch:
            def F(R):
                return R ** (l + 1) * (mp.log(R) / (l + 1) - mp.mpf(1) / (l + 1) ** 2)
            total += coeff * (F(hi) - F(lo))
        elif l + gamma + 1 == 0:
            total += coeff * (mp.log(hi) - mp.log(lo)) / gamma
        else:
            e = l + gamma + 1
            total += coeff * (hi**e - lo**e) / (e * gamma)
    return total


def _mp_moment(i: int, j: int, g, h1, h2, s):
    """``int_0^h1 int_0^h2 u^i w^j (g + u + w)^(-1-2s) dw du``."""
    mp = mpmath
    beta = -1 - 2 * s
    total = mp.mpf(0)
    for k in range(i + 1):
        gamma = k + beta + 1
        log_branch = gamma == 0
        ck = mp.binomial(i, k) * (-1) ** (i - k)
        # inner integral gives (c_w)^(i-k) [A(c_w + h1) - A(c_w)], c_w = g + w
        for m in range(i - k + 1):
            cm = mp.binomial(i - k, m) * (g ** (i - k - m) if (i - k - m) else mp.mpf(1))
            if g == 0 and i - k - m > 0:
                continue
            p = j + m
            plus = _mp_antiderivative_integral(p, k, gamma, g + h1, h2, log_branch)
            minus = _mp_antiderivative_integral(p, k, gamma, g, h2, log_branch)
            total += ck * cm * (plus - minus)
    return total


def semi_analytic_1d(mesh: Mesh, s: float, dps: int = 40) -> QuadraticForm:
    """Slobodeckij form of a 1D mesh from closed-form antiderivatives.

    Every pair integral is reduced to moments ``int int u^i w^j r^(-1-2s)``
    which are evaluated exactly in extended precision (``dps`` digits); at
    ``s = 1/2`` the logarithmic branch of the antiderivative is used.  This
    is independent of the quadrature used by :func:`assemble_slobodeckij`.
    """
    if mesh.dim != 1:
        raise ParameterError("semi_analytic_1d needs a 1D mesh")
    s = check_order(s)
    mp = mpmath
    n = mesh.n_vertices
    S = np.zeros((n, n))
    x = mesh.vertices[:, 0]
    with mp.workdps(dps):
        smp = mp.mpf(s) if s != 0.5 else mp.mpf(1) / 2
        elems = [tuple(sorted(e, key=lambda v: x[v])) for e in mesh.elements]
        for ia, (l1, r1) in enumerate(elems):
            h = mp.mpf(x[r1]) - mp.mpf(x[l1])
            c = 2 * h ** (1 - 2 * smp) / ((2 - 2 * smp) * (3 - 2 * smp))
            for (p, q), sign in (((l1, l1), 1), ((r1, r1), 1), ((l1, r1), -1), ((r1, l1), -1)):
                S[p, q] += float(sign * c)
            for ib in range(ia + 1, len(elems)):
                l2, r2 = elems[ib]
                # order so that interval "one" lies right of interval "two"
                if x[l2] >= x[r1]:
                    (a1, b1), (a2, b2) = (l2, r2), (l1, r1)
                else:
                    (a1, b1), (a2, b2) = (l1, r1), (l2, r2)
                h1 = mp.mpf(x[b1]) - mp.mpf(x[a1])
                h2 = mp.mpf(x[b2]) - mp.mpf(x[a2])
                g = mp.mpf(x[a1]) - mp.mpf(x[b2])
                # delta_k = c_k + alpha_k u + gamma_k w
                if a1 == b2:
                    dofs = [a1, b1, a2]
                    coef = [(0, -1 / h1, 1 / h2), (0, 1 / h1, 0), (0, 0, -1 / h2)]
                else:
                    dofs = [a1, b1, a2, b2]
                    coef = [(1, -1 / h1, 0), (0, 1 / h1, 0), (0, 0, -1 / h2), (-1, 0, 1 / h2)]
                mom = {}

                def moment(i, j):
                    if (i, j) not in mom:
                        mom[i, j] = _mp_moment(i, j, g, h1, h2, smp)
                    return mom[i, j]

                for r, (c0, al, ga) in enumerate(coef):
                    for t, (d0, be, de) in enumerate(coef):
                        terms = {
                            (0, 0): c0 * d0,
                            (1, 0): c0 * be + al * d0,
                            (0, 1): c0 * de + ga * d0,
                            (2, 0): al * be,
                            (1, 1): al * de + ga * be,
                            (0, 2): ga * de,
                        }
                        val = mp.mpf(0)
                        for (i, j), cf in terms.items():
                            if cf != 0:
                                val += cf * moment(i, j)
                        S[dofs[r], dofs[t]] += 2 * float(val)
    S = 0.5 * (S + S.T)
    return QuadraticForm(S, "slobodeckij", n, s=s, semi=True)


def read_form_matrix(path) -> np.ndarray:
    from pathlib import Path

    from .fespace import matrix_from_text

    return matrix_from_text(Path(path).read_text(encoding="utf-8"))
