"""Generalized eigenproblems and the discrete K-method interpolation norms.

On the P1 space the K-functional infimum is a finite-dimensional least
squares problem.  In the M-orthonormal eigenbasis of the pencil
``(stiffness, mass)`` it decouples mode by mode::

    K(t, v)^2 = sum_k c_k^2 t^2 mu_k / (1 + t^2 mu_k)

and the weighted t-integral of every mode has the closed form
``C(s) mu_k^s`` with ``C(s) = pi / (2 sin(pi s))``.  The module also keeps a
direct log-grid quadrature of the same integral as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .fespace import FormError, QuadraticForm, coefficients_of
from .slobodeckij import ParameterError, check_order

MAX_VERTICES = 2000
ZERO_MODE_RTOL = 1e-12


class SpectralError(ArithmeticError):
    """Eigensolver failure or an unusable pencil."""


# -- dense symmetric Jacobi ----------------------------------------------------


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    idx = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(idx[: m // 2])
        q = np.array(idx[m // 2 :][::-1])
        keep = (p < n) & (q < n)
        p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def jacobi_eigh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Uses the parallel (round-robin) ordering, so every round applies ``n/2``
    independent rotations at once.  A rotation is skipped when
    ``|a_pq| <= tol * sqrt(|a_pp a_qq|)``; the iteration has converged when
    a whole sweep skips every pair.  Returns ascending eigenvalues and
    orthonormal eigenvectors as columns, and raises :class:`SpectralError`
    after ``max_sweeps`` sweeps without convergence.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise SpectralError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise SpectralError("matrix has non-finite entries")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    scale = float(np.abs(A).max())
    if scale == 0.0:
        return np.zeros(n), V
    floor = 1e-18 * scale
    rounds = _round_robin(n)
    for _sweep in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            apq = A[p, q]
            app, aqq = A[p, p], A[q, q]
            active = np.abs(apq) > tol * np.sqrt(np.abs(app * aqq)) + floor
            if not active.any():
                continue
            rotated = True
            p, q, apq, app, aqq = p[active], q[active], apq[active], app[active], aqq[active]
            theta = (aqq - app) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            sn = t * c
            rp, rq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * rp - sn[:, None] * rq
            A[q, :] = sn[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = cp * c - cq * sn
            A[:, q] = cp * sn + cq * c
            vp, vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = vp * c - vq * sn
            V[:, q] = vp * sn + vq * c
        if not rotated:
            break
    else:
        raise SpectralError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    w = A.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def generalized_eigh(K: np.ndarray, M: np.ndarray, backend: str = "jacobi"):
    """Solve ``K x = mu M x`` for symmetric ``K`` and SPD ``M``.

    ``M = L L^T`` reduces the pencil to ``L^-1 K L^-T``; its eigenvectors are
    mapped back and re-orthonormalized in the ``M`` inner product.
    ``backend='lapack'`` swaps the Jacobi sweep for ``scipy.linalg.eigh``.
    """
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    try:
        L = linalg.cholesky(0.5 * (M + M.T), lower=True)
    except linalg.LinAlgError as exc:
        raise SpectralError("mass matrix is not positive definite") from exc
    Y = linalg.solve_triangular(L, 0.5 * (K + K.T), lower=True)
    C = linalg.solve_triangular(L, Y.T, lower=True)
    C = 0.5 * (C + C.T)
    if backend == "jacobi":
        mu, W = jacobi_eigh(C)
    elif backend == "lapack":
        mu, W = linalg.eigh(C)
    else:
        raise ValueError(f"unknown eigen backend {backend!r}")
    X = linalg.solve_triangular(L.T, W, lower=False)
    G = X.T @ M @ X
    R = linalg.cholesky(0.5 * (G + G.T), lower=False)
    X = linalg.solve_triangular(R.T, X.T, lower=True).T
    return mu, X


# -- decompositions and values ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """M-orthonormal eigenpairs of ``(stiffness, mass)``.

    ``dofs`` are the vertex indices the eigenvectors live on (all vertices
    for the Neumann case, interior vertices for the Dirichlet case).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: np.ndarray
    dirichlet: bool
    dofs: np.ndarray
    n_vertices: int

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def coefficients(self, v) -> np.ndarray:
        """``c_k = phi_k^T M x``; checks the Dirichlet condition when needed."""
        x = coefficients_of(v)
        if x.shape != (self.n_vertices,):
            raise FormError(f"expected {self.n_vertices} coefficients, got {x.size}")
        if self.dirichlet:
            mask = np.ones(self.n_vertices, dtype=bool)
            mask[self.dofs] = False
            scale = max(1.0, float(np.abs(x).max()))
            if np.any(np.abs(x[mask]) > 1e-12 * scale):
                raise FormError("not in the Dirichlet space: nonzero boundary values")
        y = x[self.dofs]
        return self.eigenvectors.T @ (self.mass @ y)

    def residuals(self, stiffness: np.ndarray) -> np.ndarray:
        X, mu = self.eigenvectors, self.eigenvalues
        R = stiffness @ X - (self.mass @ X) * mu[None, :]
        return np.linalg.norm(R, axis=0)

    def to_text(self) -> str:
        from .fespace import matrix_to_text

        return matrix_to_text(self.eigenvalues[None, :]) + matrix_to_text(self.eigenvectors)


def eig(
    mass: QuadraticForm, stiffness: QuadraticForm, dirichlet: bool = False,
    backend: str = "jacobi", max_vertices: int = MAX_VERTICES,
) -> SpectralDecomposition:
    """Generalized eigen-decomposition of a P1 stiffness/mass pair.

    With ``dirichlet`` the boundary rows and columns are dropped; the
    stiffness form may be passed already restricted.
    """
    n = mass.n_vertices
    if n > max_vertices:
        raise ParameterError(
            f"mesh has {n} vertices, above the dense eigensolver cap of {max_vertices}"
        )
    if mass.dofs is not None:
        raise FormError("mass form must be unrestricted")
    if dirichlet:
        if stiffness.dofs is not None:
            dofs = stiffness.dofs
            K = stiffness.matrix
        else:
            raise FormError("pass the Dirichlet stiffness form (assemble_stiffness(..., True))")
        M = mass.matrix[np.ix_(dofs, dofs)]
    else:
        if stiffness.dofs is not None:
            raise FormError("Neumann decomposition needs the unrestricted stiffness form")
        dofs = np.arange(n)
        K, M = stiffness.matrix, mass.matrix
    mu, X = generalized_eigh(K, M, backend=backend)
    top = float(np.abs(mu).max()) if mu.size else 0.0
    mu = np.where(np.abs(mu) <= ZERO_MODE_RTOL * max(top, 1.0), 0.0, mu)
    if np.any(mu < 0.0):
        raise SpectralError("stiffness pencil has negative eigenvalues")
    if not dirichlet and len(mu) > 1 and mu[1] == 0.0:
        raise SpectralError("Neumann spectrum has a repeated zero eigenvalue: mesh not connected")
    if not dirichlet:
        # fix the sign of the constant mode for reproducible output
        j = int(np.argmax(np.abs(X[:, 0])))
        if X[j, 0] < 0:
            X[:, 0] = -X[:, 0]
    for k in range(X.shape[1]):
        j = int(np.argmax(np.abs(X[:, k])))
        if X[j, k] < 0:
            X[:, k] = -X[:, k]
    mu.setflags(write=False)
    X.setflags(write=False)
    return SpectralDecomposition(mu, X, M, dirichlet, np.asarray(dofs), n)


def interpolation_constant(s: float) -> float:
    """``int_0^inf t^(1-2s) / (1 + t^2) dt = pi / (2 sin(pi s))``."""
    return math.pi / (2.0 * math.sin(math.pi * s))


@dataclass(frozen=True)
class InterpolationValue:
    value: float
    contributions: np.ndarray
    method: str
    details: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def _closed_form(v, dec: SpectralDecomposition, s: float) -> InterpolationValue:
    s = check_order(s)
    c = dec.coefficients(v)
    mu = dec.eigenvalues
    weights = np.zeros_like(mu)
    pos = mu > 0.0
    weights[pos] = interpolation_constant(s) * mu[pos] ** s
    contrib = weights * c * c
    return InterpolationValue(float(contrib.sum()), contrib, "closed_form")


def interpolation_seminorm(v, decomposition: SpectralDecomposition, s: float) -> InterpolationValue:
    """Squared discrete ``|v|_{[L2, H1]_s}``; the zero mode contributes nothing."""
    if decomposition.dirichlet:
        raise ParameterError("the semi-norm needs the Neumann decomposition")
    return _closed_form(v, decomposition, s)


def interpolation_norm_h10(v, decomposition: SpectralDecomposition, s: float) -> InterpolationValue:
    """Squared discrete ``||v||_{[L2, H1_0]_s}``; ``v`` must vanish on the boundary."""
    if not decomposition.dirichlet:
        raise ParameterError("the H1_0 norm needs the Dirichlet decomposition")
    return _closed_form(v, decomposition, s)


def interpolation_form(decomposition: SpectralDecomposition, s: float) -> QuadraticForm:
    """Matrix of ``v -> C(s) sum mu_k^s c_k^2``, i.e. ``M X diag(C mu^s) X^T M``."""
    s = check_order(s)
    mu = decomposition.eigenvalues
    d = np.where(mu > 0.0, interpolation_constant(s) * np.where(mu > 0.0, mu, 1.0) ** s, 0.0)
    MX = decomposition.mass @ decomposition.eigenvectors
    Q = (MX * d[None, :]) @ MX.T
    if decomposition.dirichlet:
        return QuadraticForm(
            Q, "interpolation_h10", decomposition.n_vertices, s=s, dofs=decomposition.dofs
        )
    return QuadraticForm(Q, "interpolation", decomposition.n_vertices, s=s, semi=True)


# -- t-quadrature oracle -------------------------------------------------------------


@dataclass(frozen=True)
class TGrid:
    """Log-grid settings for the K-functional integral.

    ``t_min``/``t_max`` fix the range explicitly; by default it is chosen from
    the spectrum so both truncated tails stay below ``tail_tol`` of the total.
    The midpoint step is halved until two levels agree to ``richardson_tol``.
    """

    step: float = 0.25
    t_min: float | None = None
    t_max: float | None = None
    tail_tol: float = 1e-13
    richardson_tol: float = 1e-11
    max_halvings: int = 6
    widen_limit: float = 1e-8


def _log_midpoint(f, lo: float, hi: float, step: float) -> float:
    n = max(2, int(math.ceil((hi - lo) / step)))
    h = (hi - lo) / n
    u = lo + h * (np.arange(n) + 0.5)
    return float(h * np.sum(f(u)))


def kfunctional_sq(t, c: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """``K(t, v)^2`` from modal coefficients (vectorized over ``t``)."""
    t2 = np.asarray(t, dtype=float)[..., None] ** 2
    return np.sum(c * c * (t2 * mu) / (1.0 + t2 * mu), axis=-1)


def kfunctional_direct(t: float, v, mass: np.ndarray, stiffness: np.ndarray) -> float:
    """``K(t, v)^2`` by solving the splitting problem without eigenvectors.

    The optimal ``v_1`` solves ``(M + t^2 A) v_1 = M v``.
    """
    x = coefficients_of(v)
    Mx = mass @ x
    v1 = np.linalg.solve(mass + t * t * stiffness, Mx)
    v0 = x - v1
    return float(v0 @ mass @ v0 + t * t * (v1 @ stiffness @ v1))


def kfunctional_quadrature(
    v, decomposition: SpectralDecomposition, s: float, grid: TGrid | None = None
) -> InterpolationValue:
    """``int_0^inf t^(-2s) K(t, v)^2 dt/t`` by the midpoint rule in ``log t``."""
    s = check_order(s)
    grid = grid or TGrid()
    c_all = decomposition.coefficients(v)
    mu_all = decomposition.eigenvalues
    pos = mu_all > 0.0
    c, mu = c_all[pos], mu_all[pos]
    contrib = np.zeros_like(mu_all)
    if mu.size == 0 or not np.any(c != 0.0):
        return InterpolationValue(0.0, contrib, "t_quadrature", {"steps": 0})
    # the integrand behaves like t^(2-2s) mu c^2 near 0 and t^(-2s) c^2 at infinity
    if grid.t_min is None:
        lo = -0.5 * math.log(mu.max()) - max(
            math.log(1e8), math.log(2.0 / grid.tail_tol) / (2.0 - 2.0 * s)
        )
    else:
        lo = math.log(grid.t_min)
    if grid.t_max is None:
        hi = -0.5 * math.log(mu.min()) + max(math.log(1e8), math.log(2.0 / grid.tail_tol) / (2.0 * s))
    else:
        hi = math.log(grid.t_max)
    if not hi > lo:
        raise ParameterError("empty t range")

    def integrand(u, cc=c, mm=mu):
        t = np.exp(u)
        return t ** (-2.0 * s) * kfunctional_sq(t, cc, mm)

    step = grid.step
    prev = _log_midpoint(integrand, lo, hi, step)
    change = math.inf
    for _ in range(grid.max_halvings):
        step *= 0.5
        cur = _log_midpoint(integrand, lo, hi, step)
        change = abs(cur - prev) / max(abs(cur), np.finfo(float).tiny)
        prev = cur
        if change <= grid.richardson_tol:
            break
    else:
        raise SpectralError(f"t-quadrature not converged (relative change {change:.3g})")
    total = prev
    tail_lo = float(np.sum(c * c * mu)) * math.exp((2.0 - 2.0 * s) * lo) / (2.0 - 2.0 * s)
    tail_hi = float(np.sum(c * c)) * math.exp(-2.0 * s * hi) / (2.0 * s)
    if tail_lo + tail_hi > grid.widen_limit * total:
        raise SpectralError(
            f"t-grid too narrow: tail estimate {(tail_lo + tail_hi) / total:.3g} of the total; widen the grid"
        )
    # per-mode split with the same grid, for reporting
    for k in np.flatnonzero(pos):
        ck, mk = c_all[k : k + 1], mu_all[k : k + 1]
        contrib[k] = _log_midpoint(lambda u, a=ck, b=mk: integrand(u, a, b), lo, hi, step)
    return InterpolationValue(
        total, contrib, "t_quadrature",
        {"log_t_range": (lo, hi), "step": step, "richardson_change": change,
         "tail_estimate": tail_lo + tail_hi},
    )
