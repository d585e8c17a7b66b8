"""Discrete Dirichlet Laplacian, mass forms, Green solves and quadrature.

Everything is written in terms of the interior unknowns.  With ``Q`` the
interpolation from interior nodal values to quadrature points and ``w`` the
quadrature weights:

* ``integrate(f) = w . f_q``
* ``load(f_q) = Q^T (w * f_q)``      (the vector ``∫ f φ_i``)
* ``M = Q^T diag(w) Q``,  ``M_W = Q^T diag(w W_q) Q``
* ``A`` the P1 stiffness matrix (weighted by ``|S^{N-1}| r^{N-1}`` on radial meshes).

Thread safety: an :class:`Operators` object is immutable apart from its
cached factorization, and :meth:`Operators.solve` serializes access to that
factorization with a lock; every call allocates its own output buffer.
"""
from __future__ import annotations

import math
import threading
import weakref

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh

__all__ = [
    "MeshMismatch",
    "WeightError",
    "Field",
    "Operators",
    "operators_for",
    "green_solve",
    "integrate",
    "weighted_mean",
    "dump_matrix",
]


class MeshMismatch(ValueError):
    """Fields or integrands defined on different meshes were combined."""


class WeightError(ValueError):
    """A weight with non-positive total mass was supplied."""


class Field:
    """Nodal P1 function vanishing on the Dirichlet boundary.

    ``values`` holds the interior unknowns; boundary values are implicitly 0.
    """

    __slots__ = ("mesh", "values")
    __array_priority__ = 100

    def __init__(self, mesh: Mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_interior,):
            raise ValueError(f"expected {mesh.n_interior} interior values, got {values.shape}")
        self.mesh = mesh
        self.values = values

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.n_interior))

    @classmethod
    def from_nodal(cls, mesh: Mesh, nodal) -> "Field":
        """Restrict a full nodal vector to the interior (boundary dropped)."""
        return cls(mesh, np.asarray(nodal, dtype=float)[~mesh.boundary])

    @classmethod
    def from_function(cls, mesh: Mesh, fn) -> "Field":
        pts = mesh.nodes[~mesh.boundary]
        return cls(mesh, np.asarray(fn(pts), dtype=float).reshape(-1))

    def full(self) -> np.ndarray:
        out = np.zeros(self.mesh.n_nodes)
        out[~self.mesh.boundary] = self.values
        return out

    def at_quad(self) -> np.ndarray:
        return operators_for(self.mesh).Q @ self.values

    def copy(self) -> "Field":
        return Field(self.mesh, self.values.copy())

    def _other(self, other):
        if isinstance(other, Field):
            if other.mesh is not self.mesh:
                raise MeshMismatch("fields live on different meshes")
            return other.values
        if np.isscalar(other):
            return other
        return NotImplemented

    def __add__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        if np.isscalar(o) and o != 0:
            raise ValueError("adding a nonzero constant breaks the Dirichlet condition")
        return Field(self.mesh, self.values + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        if np.isscalar(o) and o != 0:
            raise ValueError("subtracting a nonzero constant breaks the Dirichlet condition")
        return Field(self.mesh, self.values - o)

    def __mul__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return Field(self.mesh, self.values * o)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Field(self.mesh, self.values / c)

    def __neg__(self):
        return Field(self.mesh, -self.values)

    def __call__(self, points) -> np.ndarray:
        """Evaluate at arbitrary points (exactly 0 on and outside the boundary)."""
        return evaluate(self, points)

    def __repr__(self):
        return f"Field(n={self.values.size}, max={self.values.max(initial=0.0):.4g})"


class Operators:
    """Assembled operators on one mesh.  Obtain through :func:`operators_for`."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        interior = ~mesh.boundary
        self.Q = mesh.quad_basis[:, interior].tocsr()
        self.w = mesh.quad_weights
        self.ones_q = np.ones_like(self.w)
        self.A = _stiffness(mesh)[interior][:, interior].tocsc()
        self.M = self.mass_matrix()
        self._lu = spla.splu(self.A)
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def integrate_q(self, fq) -> float:
        return float(np.dot(self.w, fq))

    def load(self, fq) -> np.ndarray:
        """Vector of ``∫ f φ_i`` for a quadrature-point function ``fq``."""
        return self.Q.T @ (self.w * fq)

    def mass_matrix(self, weight_q=None) -> sp.csc_matrix:
        ww = self.w if weight_q is None else self.w * weight_q
        return (self.Q.T @ sp.diags(ww) @ self.Q).tocsc()

    def solve(self, b) -> np.ndarray:
        """Solve ``A u = b`` with the cached factorization."""
        b = np.array(b, dtype=float, copy=True)
        with self._lock:
            return self._lu.solve(b)

    def green_q(self, fq) -> np.ndarray:
        """Interior values of ``G[f]`` for ``f`` given at quadrature points."""
        return self.solve(self.load(fq))

    def dirichlet(self, u, v=None) -> float:
        v = u if v is None else v
        return float(u @ (self.A @ v))


_CACHE: "weakref.WeakKeyDictionary[Mesh, Operators]" = weakref.WeakKeyDictionary()
_CACHE_LOCK = threading.Lock()


def operators_for(mesh: Mesh) -> Operators:
    """Cached :class:`Operators` for ``mesh``."""
    with _CACHE_LOCK:
        ops = _CACHE.get(mesh)
        if ops is None:
            ops = Operators(mesh)
            _CACHE[mesh] = ops
        return ops


def _stiffness(mesh: Mesh) -> sp.csr_matrix:
    if mesh.kind == "radial":
        r = mesh.nodes[:, 0]
        a, b = r[mesh.cells[:, 0]], r[mesh.cells[:, 1]]
        h = b - a
        sphere = 2.0 * math.pi ** (mesh.dim / 2) / math.gamma(mesh.dim / 2)
        # ∫_a^b r^{N-1} dr exactly
        k = sphere * (b ** mesh.dim - a ** mesh.dim) / mesh.dim / h ** 2
        local = np.array([[1.0, -1.0], [-1.0, 1.0]])
        vals = (k[:, None, None] * local[None]).ravel()
        rows = np.repeat(mesh.cells, 2, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, 2)).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes,) * 2)
    p = mesh.nodes
    t = mesh.cells
    x, y = p[t, 0], p[t, 1]
    # gradients of barycentric coordinates
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (bx[:, 0] * by[:, 1] - bx[:, 1] * by[:, 0])
    k = (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :]) / (4 * area[:, None, None])
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((k.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)


def _source_at_quad(mesh: Mesh, f) -> np.ndarray:
    ops = operators_for(mesh)
    if np.isscalar(f):
        return np.full(ops.w.shape, float(f))
    if isinstance(f, Field):
        if f.mesh is not mesh:
            raise MeshMismatch("source field lives on another mesh")
        return ops.Q @ f.values
    f = np.asarray(f, dtype=float)
    if f.shape == (mesh.n_nodes,):
        return mesh.quad_basis @ f
    raise ValueError("source must be a scalar, a Field or a full nodal vector")


def green_solve(mesh: Mesh, f) -> Field:
    """Discrete ``u = G[f]``: ``-Δu = f`` in the domain, ``u = 0`` on the boundary.

    ``f`` may be a constant, a :class:`Field` or a full nodal vector (which
    may be nonzero on the boundary, e.g. ``f ≡ 1``).
    """
    ops = operators_for(mesh)
    return Field(mesh, ops.green_q(_source_at_quad(mesh, f)))


def integrate(mesh: Mesh, f) -> float:
    """Quadrature integral of a constant, a Field, a nodal vector or a product of Fields.

    A tuple/list of fields is integrated as their pointwise product at the
    quadrature points.
    """
    if isinstance(f, (tuple, list)):
        prod = np.ones_like(mesh.quad_weights)
        for g in f:
            prod = prod * _source_at_quad(mesh, g)
        return float(np.dot(mesh.quad_weights, prod))
    return float(np.dot(mesh.quad_weights, _source_at_quad(mesh, f)))


def weighted_mean(mesh: Mesh, weight, f) -> float:
    """``<f>_W = ∫ W f / ∫ W``.  ``weight`` and ``f`` may be quadrature arrays."""
    wq = _maybe_quad(mesh, weight)
    fq = _maybe_quad(mesh, f)
    if np.any(wq < 0):
        raise WeightError("weight must be nonnegative")
    total = float(np.dot(mesh.quad_weights, wq))
    if not total > 0:
        raise WeightError("weight has non-positive integral")
    return float(np.dot(mesh.quad_weights, wq * fq)) / total


def _maybe_quad(mesh, g):
    if isinstance(g, np.ndarray) and g.shape == mesh.quad_weights.shape and g.shape != (mesh.n_nodes,):
        return g
    return _source_at_quad(mesh, g)


def evaluate(field: Field, points) -> np.ndarray:
    mesh = field.mesh
    nodal = field.full()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.kind == "radial":
        r = np.linalg.norm(pts, axis=1) if pts.shape[1] > 1 else np.abs(pts[:, 0])
        return np.interp(r, mesh.nodes[:, 0], nodal, right=0.0)
    p = mesh.nodes
    t = mesh.cells
    a, b, c = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    out = np.zeros(len(pts))
    tol = 1e-12
    for k, x in enumerate(pts):
        l1 = ((x[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (x[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (x[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[0] - a[:, 0])) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            continue
        j = hits[0]
        lam = np.array([l0[j], l1[j], l2[j]])
        verts = t[j]
        active = np.abs(lam) > tol
        if np.all(mesh.boundary[verts[active]]):
            continue  # point on the Dirichlet boundary
        out[k] = float(lam @ nodal[verts])
    return out


def dump_matrix(matrix, path) -> None:
    """Write a sparse matrix in coordinate text format (``i j value`` per line)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
