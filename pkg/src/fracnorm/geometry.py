"""Simplicial meshes, affine maps and the geometric quantities of a domain.

A domain is represented by a conforming mesh of intervals (1D) or triangles
(2D).  Besides the mesh itself this module provides the metrics that enter
the norm constants: diameter ``D``, inner diameter ``d`` (twice the radius of
the largest contained ball), shape ratio ``rho = D/d`` and measure ``|O|``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

GEOM_RTOL = 1e-10


class GeometryError(ValueError):
    """Raised for invalid meshes, singular maps and inconsistent metrics."""


def simplex_measures(coords: np.ndarray) -> np.ndarray:
    """Signed measures of simplices given as an ``(E, d+1, d)`` coordinate array."""
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[-1]
    if dim == 1:
        return coords[:, 1, 0] - coords[:, 0, 0]
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def simplex_diameters(coords: np.ndarray) -> np.ndarray:
    """Longest edge of each simplex in an ``(..., d+1, d)`` array."""
    coords = np.asarray(coords, dtype=float)
    k = coords.shape[-2]
    best = np.zeros(coords.shape[:-2])
    for i, j in itertools.combinations(range(k), 2):
        best = np.maximum(best, np.linalg.norm(coords[..., i, :] - coords[..., j, :], axis=-1))
    return best


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from points ``p`` to segments ``[a, b]`` (broadcasting)."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum(ap * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh of a bounded connected domain.

    ``vertices`` has shape ``(N, dim)`` and ``elements`` shape ``(E, dim+1)``
    with 0-based vertex indices.  Elements are reoriented on construction so
    that every signed measure is positive; degenerate, overlapping,
    nonconforming or disconnected input raises :class:`GeometryError`.
    """

    vertices: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        elems = np.array(self.elements, dtype=np.int64)
        if verts.ndim == 1:
            verts = verts[:, None]
        if verts.ndim != 2 or verts.shape[1] not in (1, 2):
            raise GeometryError("vertices must have shape (N, 1) or (N, 2)")
        dim = verts.shape[1]
        if elems.ndim != 2 or elems.shape[0] == 0:
            raise GeometryError("empty mesh")
        if elems.shape[1] != dim + 1:
            raise GeometryError(f"{dim}D elements need {dim + 1} vertices, got {elems.shape[1]}")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("non-finite vertex coordinates")
        if elems.min() < 0 or elems.max() >= len(verts):
            raise GeometryError("element refers to a missing vertex")
        if len(np.unique(elems)) != len(verts):
            raise GeometryError("every vertex must belong to at least one element")

        signed = simplex_measures(verts[elems])
        scale = max(np.ptp(verts, axis=0).max(), np.finfo(float).tiny) ** dim
        if np.any(np.abs(signed) <= GEOM_RTOL * scale * 1e-3):
            raise GeometryError("element with zero measure")
        flip = signed < 0
        if np.any(flip):
            elems[flip, 0], elems[flip, 1] = elems[flip, 1].copy(), elems[flip, 0].copy()
        verts.setflags(write=False)
        elems.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "elements", elems)
        self._validate()

    # -- topology -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def measures(self) -> np.ndarray:
        """Element lengths (1D) or areas (2D), all positive."""
        return simplex_measures(self.vertices[self.elements])

    @cached_property
    def diameters(self) -> np.ndarray:
        return simplex_diameters(self.vertices[self.elements])

    @property
    def volume(self) -> float:
        return float(self.measures.sum())

    @cached_property
    def _facet_table(self):
        elems = self.elements
        if self.dim == 1:
            facets = elems.reshape(-1, 1)
            owners = np.repeat(np.arange(self.n_elements), 2)
        else:
            local = [(0, 1), (1, 2), (2, 0)]
            facets = np.concatenate([elems[:, list(p)] for p in local])
            owners = np.tile(np.arange(self.n_elements), 3)
        keys = np.sort(facets, axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return facets, owners, uniq, inverse.ravel(), counts

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        """Facets with element multiplicity one.

        In 2D the edges keep the orientation of their (positively oriented)
        element, so the domain lies to their left.
        """
        facets, _, _, inverse, counts = self._facet_table
        on_bdry = counts[inverse] == 1
        return facets[on_bdry]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    @cached_property
    def mesh_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.elements).tobytes())
        return h.hexdigest()[:16]

    def _validate(self):
        _, owners, _, inverse, counts = self._facet_table
        if counts.max() > 2:
            raise GeometryError("nonconforming mesh: facet shared by more than two elements")
        # element adjacency through interior facets
        order = np.argsort(inverse, kind="stable")
        inv_sorted = inverse[order]
        own_sorted = owners[order]
        pair = np.flatnonzero(inv_sorted[1:] == inv_sorted[:-1])
        a, b = own_sorted[pair], own_sorted[pair + 1]
        graph = coo_matrix((np.ones(len(a)), (a, b)), shape=(self.n_elements,) * 2)
        ncomp, _ = connected_components(graph, directed=False)
        if ncomp != 1:
            raise GeometryError("mesh is not connected")

        total = self.volume
        if self.dim == 1:
            enclosed = float(np.ptp(self.vertices[:, 0]))
        else:
            bf = self.boundary_facets
            p, q = self.vertices[bf[:, 0]], self.vertices[bf[:, 1]]
            enclosed = 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))
            # hanging nodes: a boundary vertex strictly inside a boundary edge
            bv = self.vertices[self.boundary_vertices]
            d = point_segment_distance(bv[None, :, :], p[:, None, :], q[:, None, :])
            is_end = (self.boundary_vertices[None, :] == bf[:, :1]) | (
                self.boundary_vertices[None, :] == bf[:, 1:]
            )
            lengths = np.linalg.norm(q - p, axis=1)
            if np.any((d <= GEOM_RTOL * lengths[:, None]) & ~is_end):
                raise GeometryError("nonconforming mesh: hanging vertex on an edge")
        if abs(enclosed - total) > 1e-9 * total:
            raise GeometryError("overlapping elements: element measures exceed the enclosed measure")

    # -- evaluation helpers --------------------------------------------
    def locate(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Index of an element containing each point, or -1 if outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[-1] != 1:
            pts = pts.reshape(-1, 1)
        bary = self.barycentric(pts)
        inside = np.all(bary >= -tol, axis=2)
        idx = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        return idx

    def barycentric(self, pts: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``pts`` (P, dim) w.r.t. every element: (P, E, dim+1)."""
        coords = self.vertices[self.elements]
        base = coords[:, 0, :]
        jac = np.swapaxes(coords[:, 1:, :] - base[:, None, :], 1, 2)  # (E, d, d)
        inv = np.linalg.inv(jac)
        rel = pts[:, None, :] - base[None, :, :]
        lam = np.einsum("eij,pej->pei", inv, rel)
        return np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point to the boundary (no containment test)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1:
            bx = self.vertices[self.boundary_vertices, 0]
            return np.min(np.abs(pts[:, :1] - bx[None, :]), axis=1)
        bf = self.boundary_facets
        a, b = self.vertices[bf[:, 0]], self.vertices[bf[:, 1]]
        out = np.empty(len(pts))
        step = 4096
        for start in range(0, len(pts), step):
            chunk = pts[start : start + step, None, :]
            out[start : start + step] = point_segment_distance(chunk, a[None], b[None]).min(axis=1)
        return out

    # -- I/O -------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{self.dim} {self.n_vertices} {self.n_elements}"]
        lines += [" ".join(repr(float(c)) for c in v) for v in self.vertices]
        lines += [" ".join(str(int(i)) for i in e) for e in self.elements]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"dim": self.dim, "vertices": self.vertices.tolist(), "elements": self.elements.tolist()}
        )


def mesh_from_text(text: str) -> Mesh:
    """Parse the line-oriented mesh format (``#`` starts a comment)."""
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise GeometryError("empty mesh file")
    try:
        dim, nv, ne = (int(x) for x in rows[0])
        verts = [[float(x) for x in r] for r in rows[1 : 1 + nv]]
        elems = [[int(x) for x in r] for r in rows[1 + nv : 1 + nv + ne]]
    except ValueError as exc:
        raise GeometryError(f"malformed mesh text: {exc}") from exc
    if len(verts) != nv or len(elems) != ne or any(len(v) != dim for v in verts):
        raise GeometryError("mesh text does not match its header")
    return Mesh(np.array(verts).reshape(nv, dim), np.array(elems).reshape(ne, dim + 1))


def mesh_from_json(text: str) -> Mesh:
    doc = json.loads(text)
    try:
        dim = int(doc["dim"])
        verts = np.array(doc["vertices"], dtype=float).reshape(-1, dim)
        elems = np.array(doc["elements"], dtype=np.int64).reshape(-1, dim + 1)
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed mesh JSON: {exc}") from exc
    return Mesh(verts, elems)


def read_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return mesh_from_json(text)
    return mesh_from_text(text)


def write_mesh(mesh: Mesh, path: str | Path):
    path = Path(path)
    text = mesh.to_json() if path.suffix == ".json" else mesh.to_text()
    path.write_text(text, encoding="utf-8", newline="\n")


# -- generators ----------------------------------------------------------


def interval(n: int, a: float = 0.0, b: float = 1.0) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n`` elements."""
    if n < 1:
        raise GeometryError("interval needs at least one element")
    x = np.linspace(a, b, n + 1)
    elems = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x[:, None], elems)


def square(n: int, length: float = 1.0) -> Mesh:
    """Unit square split into ``n*n`` cells, each cut along its rising diagonal."""
    if n < 1:
        raise GeometryError("square needs n >= 1")
    g = np.linspace(0.0, length, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elems = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(verts, elems)


def ltriangle(n: int) -> Mesh:
    """Right triangle with vertices (0,0), (1,0), (0,1), uniformly split into ``n*n`` triangles."""
    if n < 1:
        raise GeometryError("ltriangle needs n >= 1")
    index = {}
    verts = []
    for j in range(n + 1):
        for i in range(n + 1 - j):
            index[i, j] = len(verts)
            verts.append((i / n, j / n))
    elems = []
    for j in range(n):
        for i in range(n - j):
            elems.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < n - 1:
                elems.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return Mesh(np.array(verts), np.array(elems))


def refine(mesh: Mesh) -> Mesh:
    """Uniform refinement: bisection in 1D, red refinement in 2D."""
    verts = mesh.vertices
    elems = mesh.elements
    if mesh.dim == 1:
        mids = 0.5 * (verts[elems[:, 0]] + verts[elems[:, 1]])
        m = mesh.n_vertices + np.arange(mesh.n_elements)
        new_elems = np.concatenate(
            [np.column_stack([elems[:, 0], m]), np.column_stack([m, elems[:, 1]])]
        )
        return Mesh(np.vstack([verts, mids]), new_elems)
    edges = np.sort(np.concatenate([elems[:, [0, 1]], elems[:, [1, 2]], elems[:, [2, 0]]]), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.ravel().reshape(3, -1).T + mesh.n_vertices
    mids = 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])
    a, b, c = elems.T
    mab, mbc, mca = inverse.T
    new_elems = np.concatenate(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ]
    )
    return Mesh(np.vstack([verts, mids]), new_elems)


GENERATORS = {"interval": interval, "square": square, "ltriangle": ltriangle}
_GEN_RE = re.compile(r"^\s*([a-z_]+)\s*\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)\s*$")


def is_generator_spec(spec: str) -> bool:
    m = _GEN_RE.match(spec)
    return bool(m) and m.group(1) in GENERATORS


def mesh_from_spec(spec: str) -> Mesh:
    """Build a mesh from ``"square(4)"``-style text (optional 2nd arg: refinements) or a file path."""
    m = _GEN_RE.match(spec)
    if m and m.group(1) in GENERATORS:
        mesh = GENERATORS[m.group(1)](int(m.group(2)))
        for _ in range(int(m.group(3) or 0)):
            mesh = refine(mesh)
        return mesh
    if m:
        raise GeometryError(f"unknown mesh generator {m.group(1)!r}")
    return read_mesh(spec)


# -- affine maps ---------------------------------------------------------


def spectral_norm(B) -> float:
    """Largest singular value of a 1x1 or 2x2 matrix (closed form)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape not in ((1, 1), (2, 2)):
        raise GeometryError("spectral_norm supports 1x1 and 2x2 matrices only")
    if B.shape == (1, 1):
        if B[0, 0] == 0.0:
            raise GeometryError("non-invertible map")
        return abs(float(B[0, 0]))
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    frob2 = float(np.sum(B * B))
    if abs(det) <= 1e-14 * frob2:
        raise GeometryError("non-invertible map")
    a, b, c, d = (float(x) for x in B.ravel())
    # cancellation-free form: sigma_max = (|z1| + |z2|) / 2
    return 0.5 * (math.hypot(a + d, c - b) + math.hypot(a - d, c + b))


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> x0 + B x`` with cached ``det B``, ``||B||`` and ``||B^-1||``."""

    B: np.ndarray
    x0: np.ndarray = None
    label: str = ""
    det_B: float = field(init=False)
    norm_B: float = field(init=False)
    norm_Binv: float = field(init=False)

    def __post_init__(self):
        B = np.atleast_2d(np.array(self.B, dtype=float))
        n = B.shape[0]
        if B.shape != (n, n) or n not in (1, 2):
            raise GeometryError("B must be 1x1 or 2x2")
        x0 = np.zeros(n) if self.x0 is None else np.array(self.x0, dtype=float).reshape(n)
        norm_B = spectral_norm(B)
        det = float(B[0, 0]) if n == 1 else float(B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0])
        Binv = np.linalg.inv(B)
        B.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "det_B", det)
        object.__setattr__(self, "norm_B", norm_B)
        object.__setattr__(self, "norm_Binv", spectral_norm(Binv))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def abs_det(self) -> float:
        return abs(self.det_B)

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        return self.x0 + pts @ self.B.T

    def inverse(self) -> "AffineMap":
        Binv = np.linalg.inv(self.B)
        return AffineMap(Binv, -Binv @ self.x0, label=f"inv({self.label})" if self.label else "")

    def compose(self, other: "AffineMap") -> "AffineMap":
        """``self o other``."""
        return AffineMap(self.B @ other.B, self.B @ other.x0 + self.x0)

    def is_conformal(self, rtol: float = 1e-12) -> bool:
        return abs(self.norm_B * self.norm_Binv - 1.0) <= rtol

    def describe(self) -> dict:
        return {
            "label": self.label,
            "B": self.B.tolist(),
            "x0": self.x0.tolist(),
            "det_B": self.det_B,
            "norm_B": self.norm_B,
            "norm_Binv": self.norm_Binv,
        }

    # constructors
    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), label="identity")

    @classmethod
    def scaling(cls, h: float, n: int, x0=None) -> "AffineMap":
        return cls(h * np.eye(n), x0, label=f"scale({h:g})")

    @classmethod
    def rotation(cls, theta: float, x0=None) -> "AffineMap":
        c, s = math.cos(theta), math.sin(theta)
        return cls([[c, -s], [s, c]], x0, label=f"rot({theta:.6g})")

    @classmethod
    def shear(cls, k: float, x0=None) -> "AffineMap":
        return cls([[1.0, k], [0.0, 1.0]], x0, label=f"shear({k:g})")

    @classmethod
    def diagonal(cls, a: float, b: float, x0=None) -> "AffineMap":
        return cls([[a, 0.0], [0.0, b]], x0, label=f"diag({a:g},{b:g})")


def apply_map(mesh: Mesh, F: AffineMap) -> Mesh:
    """Image mesh ``F(mesh)``; connectivity kept, orientation repaired by :class:`Mesh`."""
    if F.dim != mesh.dim:
        raise GeometryError("map and mesh dimensions differ")
    return Mesh(F(mesh.vertices), mesh.elements.copy())


# -- domain metrics --------------------------------------------------------


@dataclass(frozen=True)
class DomainMetrics:
    diameter: float
    inner_diameter: float
    shape_ratio: float
    area: float
    dim: int
    approximate: bool = False
    center: tuple = ()

    def to_dict(self) -> dict:
        return {
            "diameter": self.diameter,
            "inner_diameter": self.inner_diameter,
            "shape_ratio": self.shape_ratio,
            "area": self.area,
            "dim": self.dim,
            "approximate": self.approximate,
            "center": list(self.center),
        }


def _unique_lines(eqs: np.ndarray) -> np.ndarray:
    keep = []
    for row in eqs:
        if not any(np.allclose(row, k, rtol=0, atol=1e-12) for k in keep):
            keep.append(row)
    return np.array(keep)


def chebyshev_center_convex(halfplanes: np.ndarray) -> tuple[np.ndarray, float]:
    """Largest inscribed disc of ``{x : n_i.x + o_i <= 0}`` with unit normals.

    Maximizes ``r`` subject to ``n_i.c + r <= -o_i`` by enumerating every
    triple of active constraints.
    """
    A = np.column_stack([halfplanes[:, :2], np.ones(len(halfplanes))])
    rhs = -halfplanes[:, 2]
    triples = np.array(list(itertools.combinations(range(len(halfplanes)), 3)))
    mats = A[triples]
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 1e-12
    sols = np.linalg.solve(mats[ok], rhs[triples[ok]][..., None])[..., 0]
    slack = rhs[None, :] - sols @ A.T
    scale = max(1.0, float(np.abs(rhs).max()))
    feasible = np.all(slack >= -1e-10 * scale, axis=1) & (sols[:, 2] >= 0)
    if not feasible.any():
        raise GeometryError("no feasible Chebyshev center")
    cand = sols[feasible]
    best = cand[np.argmax(cand[:, 2])]
    return best[:2], float(best[2])


def _chebyshev_sampled(mesh: Mesh, n_grid: int = 160, zoom_steps: int = 6):
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    best_pt, best_r = None, -1.0
    for _ in range(zoom_steps):
        gx = np.linspace(center[0] - half[0], center[0] + half[0], n_grid)
        gy = np.linspace(center[1] - half[1], center[1] + half[1], n_grid)
        pts = np.column_stack([a.ravel() for a in np.meshgrid(gx, gy)])
        inside = mesh.locate(pts) >= 0
        if not inside.any():
            break
        pts = pts[inside]
        r = mesh.boundary_distance(pts)
        k = int(np.argmax(r))
        if r[k] > best_r:
            best_pt, best_r = pts[k], float(r[k])
        center = best_pt
        half = 4.0 * half / n_grid
    return best_pt, best_r


def domain_metrics(mesh: Mesh) -> DomainMetrics:
    """Diameter, inner diameter, shape ratio and measure of the meshed domain."""
    if mesh.n_elements == 0:
        raise GeometryError("empty mesh")
    area = mesh.volume
    if mesh.dim == 1:
        x = mesh.vertices[:, 0]
        length = float(x.max() - x.min())
        return DomainMetrics(length, length, 1.0, area, 1, False, (float(0.5 * (x.max() + x.min())),))
    hull = ConvexHull(mesh.vertices)
    hull_pts = mesh.vertices[hull.vertices]
    diameter = float(pdist(hull_pts).max())
    convex = abs(hull.volume - area) <= 1e-9 * area
    if convex:
        center, radius = chebyshev_center_convex(_unique_lines(hull.equations))
        approximate = False
    else:
        center, radius = _chebyshev_sampled(mesh)
        approximate = True
    inner = 2.0 * radius
    return DomainMetrics(
        diameter, inner, diameter / inner, area, 2, approximate, tuple(float(c) for c in center)
    )


def is_convex(mesh: Mesh) -> bool:
    if mesh.dim == 1:
        return True
    hull = ConvexHull(mesh.vertices)
    return abs(hull.volume - mesh.volume) <= 1e-9 * mesh.volume


def distance_to_boundary(mesh: Mesh, x) -> float:
    """Exact distance from an interior point ``x`` to the boundary."""
    pt = np.asarray(x, dtype=float).reshape(1, mesh.dim)
    if mesh.locate(pt)[0] < 0:
        raise GeometryError(f"point {pt.ravel().tolist()} lies outside the domain")
    return float(mesh.boundary_distance(pt)[0])


@dataclass(frozen=True)
class MapBounds:
    """The geometric map bounds relating ``B`` to the metrics of both domains."""

    norm_B: float
    norm_Binv: float
    abs_det: float
    norm_B_bound: float
    norm_Binv_bound: float
    cond_bound: float
    det_ratio: float
    det_bound: float
    det_inv_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def map_bound_constants(F: AffineMap, ref: DomainMetrics, img: DomainMetrics) -> MapBounds:
    """Evaluate ``||B|| <= D/d_ref`` and the related bounds, failing loudly if one is violated."""
    n = F.dim
    bounds = MapBounds(
        norm_B=F.norm_B,
        norm_Binv=F.norm_Binv,
        abs_det=F.abs_det,
        norm_B_bound=img.diameter / ref.inner_diameter,
        norm_Binv_bound=ref.diameter / img.inner_diameter,
        cond_bound=img.shape_ratio * ref.shape_ratio,
        det_ratio=img.area / ref.area,
        det_bound=img.diameter**n / ref.inner_diameter**n,
        det_inv_bound=ref.diameter**n / img.inner_diameter**n,
    )
    checks = [
        ("||B||", bounds.norm_B, bounds.norm_B_bound),
        ("||B^-1||", bounds.norm_Binv, bounds.norm_Binv_bound),
        ("||B|| ||B^-1||", bounds.norm_B * bounds.norm_Binv, bounds.cond_bound),
        ("|det B|", bounds.abs_det, bounds.det_bound),
        ("|det B|^-1", 1.0 / bounds.abs_det, bounds.det_inv_bound),
    ]
    for name, value, bound in checks:
        if value > bound * (1.0 + GEOM_RTOL):
            raise GeometryError(f"geometry inconsistency: {name} = {value!r} exceeds bound {bound!r}")
    if abs(bounds.abs_det - bounds.det_ratio) > 1e-9 * bounds.det_ratio:
        raise GeometryError(
            f"geometry inconsistency: |det B| = {bounds.abs_det!r} but |O|/|O_ref| = {bounds.det_ratio!r}"
        )
    return bounds
