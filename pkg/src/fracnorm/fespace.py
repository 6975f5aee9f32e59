"""P1 functions, quadratic forms and the exact mass/stiffness matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AffineMap, GeometryError, Mesh


class FormError(ValueError):
    """Raised when a function does not fit the space a form lives on."""


@dataclass(frozen=True, eq=False)
class P1Function:
    """Continuous piecewise-linear function given by its nodal values."""

    mesh: Mesh
    coefficients: np.ndarray
    label: str = ""

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).ravel()
        if c.shape != (self.mesh.n_vertices,):
            raise FormError(
                f"expected {self.mesh.n_vertices} coefficients, got {c.size}"
            )
        if not np.all(np.isfinite(c)):
            raise FormError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_callable(cls, mesh: Mesh, f, label: str = "") -> "P1Function":
        """Nodal interpolant of ``f(x)`` (1D) or ``f(x, y)`` (2D)."""
        cols = [mesh.vertices[:, k] for k in range(mesh.dim)]
        vals = np.broadcast_to(np.asarray(f(*cols), dtype=float), (mesh.n_vertices,))
        return cls(mesh, vals, label)

    def shifted(self, c: float) -> "P1Function":
        return P1Function(self.mesh, self.coefficients + c, self.label)

    def is_constant(self, rtol: float = 1e-14) -> bool:
        c = self.coefficients
        return bool(np.ptp(c) <= rtol * max(1.0, float(np.abs(c).max())))

    def vanishes_on_boundary(self, rtol: float = 1e-12) -> bool:
        c = self.coefficients
        scale = max(1.0, float(np.abs(c).max()))
        return bool(np.all(np.abs(c[self.mesh.boundary_vertices]) <= rtol * scale))


def coefficients_of(v) -> np.ndarray:
    if isinstance(v, P1Function):
        return v.coefficients
    return np.asarray(v, dtype=float).ravel()


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric PSD matrix ``A`` representing ``v -> x^T A x``.

    ``dofs`` lists the vertex indices of the rows (``None`` means all
    vertices).  For a restricted form the function must vanish at the
    remaining vertices.  ``semi`` marks forms whose kernel contains the
    constants; their values are evaluated on the centred coefficient vector,
    which makes shift invariance hold to rounding.
    """

    matrix: np.ndarray
    kind: str
    n_vertices: int
    s: float | None = None
    dofs: np.ndarray | None = None
    semi: bool = False
    warnings: tuple = field(default_factory=tuple)

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise FormError("form matrix must be square")
        scale = max(float(np.abs(A).max()), np.finfo(float).tiny)
        if np.abs(A - A.T).max() > 1e-12 * scale:
            raise FormError(f"{self.kind} form is not symmetric")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        if self.dofs is not None:
            d = np.array(self.dofs, dtype=np.int64)
            d.setflags(write=False)
            object.__setattr__(self, "dofs", d)
            if len(d) != A.shape[0]:
                raise FormError("dofs and matrix size disagree")
        elif A.shape[0] != self.n_vertices:
            raise FormError("matrix size must equal the vertex count")
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def restrict(self, v) -> np.ndarray:
        """Coefficients on ``dofs``; raises if ``v`` is nonzero elsewhere."""
        x = coefficients_of(v)
        if x.shape != (self.n_vertices,):
            raise FormError(f"expected {self.n_vertices} coefficients, got {x.size}")
        if self.dofs is None:
            return x
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.dofs] = False
        scale = max(1.0, float(np.abs(x).max()))
        if np.any(np.abs(x[mask]) > 1e-12 * scale):
            raise FormError("not in the Dirichlet space: nonzero boundary values")
        return x[self.dofs]

    def value(self, v) -> float:
        x = self.restrict(v)
        if self.semi:
            x = x - x.mean()
        return float(x @ self.matrix @ x)

    __call__ = value

    def bilinear(self, u, v) -> float:
        x, y = self.restrict(u), self.restrict(v)
        if self.semi:
            x, y = x - x.mean(), y - y.mean()
        return float(x @ self.matrix @ y)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self, rtol: float = 1e-10) -> bool:
        norm = float(np.abs(self.matrix).sum(axis=1).max())
        return self.min_eigenvalue() >= -rtol * norm

    def with_warnings(self, *msgs: str) -> "QuadraticForm":
        return QuadraticForm(
            self.matrix, self.kind, self.n_vertices, self.s, self.dofs, self.semi,
            self.warnings + tuple(msgs),
        )

    def to_text(self) -> str:
        return matrix_to_text(self.matrix)


def matrix_to_text(A: np.ndarray) -> str:
    """Dense row-major text format with an ``n m`` header."""
    A = np.atleast_2d(A)
    lines = [f"{A.shape[0]} {A.shape[1]}"]
    lines += [" ".join(f"{x:.17g}" for x in row) for row in A]
    return "\n".join(lines) + "\n"


def matrix_from_text(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    n, m = (int(x) for x in rows[0])
    A = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    if A.shape != (n, m):
        raise FormError(f"matrix text has shape {A.shape}, header says {(n, m)}")
    return A


def scatter_dense(n: int, dof_map: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Sum local ``(P, k, k)`` blocks into a dense ``n x n`` matrix.

    Uses a single ``bincount`` pass, so the summation order is fixed by the
    order of the blocks.
    """
    dof_map = np.asarray(dof_map)
    k = dof_map.shape[1]
    rows = np.repeat(dof_map, k, axis=1)
    cols = np.tile(dof_map, (1, k))
    flat = (rows * n + cols).ravel()
    return np.bincount(flat, weights=local.reshape(-1), minlength=n * n).reshape(n, n)


def element_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the barycentric coordinates, shape ``(E, dim+1, dim)``."""
    coords = mesh.vertices[mesh.elements]
    jac = np.swapaxes(coords[:, 1:, :] - coords[:, :1, :], 1, 2)  # columns are edge vectors
    inv = np.linalg.inv(jac)  # rows are gradients of lambda_1..lambda_d
    grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    return grads


def local_mass(dim: int) -> np.ndarray:
    """Reference P1 mass matrix divided by the element measure."""
    k = dim + 1
    return (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))


def assemble_mass(mesh: Mesh) -> QuadraticForm:
    """Exact P1 mass matrix: ``|T|/6 [[2,1],[1,2]]`` and ``|T|/12 (1 + I)``."""
    local = mesh.measures[:, None, None] * local_mass(mesh.dim)[None]
    M = scatter_dense(mesh.n_vertices, mesh.elements, local)
    return QuadraticForm(M, "mass", mesh.n_vertices)


def assemble_stiffness(mesh: Mesh, dirichlet: bool = False) -> QuadraticForm:
    """Exact P1 stiffness matrix, optionally with boundary rows/columns eliminated."""
    G = element_gradients(mesh)
    local = mesh.measures[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    K = scatter_dense(mesh.n_vertices, mesh.elements, local)
    if dirichlet:
        dofs = mesh.interior_vertices
        if len(dofs) == 0:
            raise FormError("mesh has no interior vertices")
        return QuadraticForm(K[np.ix_(dofs, dofs)], "stiffness", mesh.n_vertices, dofs=dofs)
    return QuadraticForm(K, "stiffness", mesh.n_vertices, semi=True)


def restrict_form(form: QuadraticForm, dofs: np.ndarray, kind: str | None = None) -> QuadraticForm:
    """Restriction of a full form to a subset of vertices."""
    if form.dofs is not None:
        raise FormError("form is already restricted")
    dofs = np.asarray(dofs)
    return QuadraticForm(
        form.matrix[np.ix_(dofs, dofs)], kind or form.kind, form.n_vertices, form.s, dofs,
        False, form.warnings,
    )


def integral(v, mass: QuadraticForm) -> float:
    """``int_O v`` via the mass matrix row sums."""
    x = coefficients_of(v)
    return float(mass.matrix.sum(axis=0) @ x)


def mean(v, mass: QuadraticForm) -> float:
    """L2 mean ``int v / |O|``."""
    w = mass.matrix.sum(axis=0)
    return float(w @ coefficients_of(v) / w.sum())


def l2_optimal_shift(v, mass: QuadraticForm) -> float:
    """The constant ``c*`` minimizing ``||v + c||_0``, i.e. minus the mean."""
    return -mean(v, mass)


def l2_norm_sq(v, mass: QuadraticForm) -> float:
    return mass.value(v)


def shifted_l2_sq(v, mass: QuadraticForm) -> float:
    """``inf_c ||v + c||_0^2 = ||v||_0^2 - |O| mean(v)^2``, evaluated as ``||v - mean||_0^2``."""
    x = coefficients_of(v)
    y = x - mean(x, mass)
    return float(y @ mass.matrix @ y)


def _check_related(coarse: Mesh, fine: Mesh, F: AffineMap):
    if coarse.n_vertices != fine.n_vertices or coarse.n_elements != fine.n_elements:
        raise GeometryError("mesh mismatch: vertex or element counts differ")
    img = F(coarse.vertices)
    scale = max(1.0, float(np.abs(fine.vertices).max()))
    if np.abs(img - fine.vertices).max() > 1e-10 * scale:
        raise GeometryError("mesh mismatch: meshes are not related by the map")
    if not np.array_equal(np.sort(coarse.elements, axis=1), np.sort(fine.elements, axis=1)):
        raise GeometryError("mesh mismatch: connectivity differs")


def pullback(v: P1Function, F: AffineMap, ref_mesh: Mesh) -> P1Function:
    """``v_hat(x_hat) = v(F x_hat)``; for P1 this copies the nodal values."""
    _check_related(ref_mesh, v.mesh, F)
    return P1Function(ref_mesh, v.coefficients, v.label)


def pushforward(v_hat: P1Function, F: AffineMap, mapped_mesh: Mesh) -> P1Function:
    """Inverse of :func:`pullback`: the function on ``F(mesh)`` with the same nodal values."""
    _check_related(v_hat.mesh, mapped_mesh, F)
    return P1Function(mapped_mesh, v_hat.coefficients, v_hat.label)
