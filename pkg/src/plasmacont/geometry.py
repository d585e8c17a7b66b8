"""Unit-measure computational domains and their meshes.

Two mesh flavours are produced:

* ``"tri"`` -- conforming linear triangles in the plane (disk, rectangle,
  polygon, perturbed disk);
* ``"radial"`` -- a 1D grid in the radius of an N-ball, integrated with the
  weight ``|S^{N-1}| r^{N-1}``.  Only radially symmetric fields live on it.

Every mesh carries a quadrature rule together with the sparse matrix that
interpolates nodal values to the quadrature points.  All integrals in the
package go through that pair, so nonlinear terms are always evaluated at
quadrature points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma as gamma_fn
from shapely.geometry import LinearRing, Point, Polygon

__all__ = [
    "GeometryError",
    "PerturbationTooLarge",
    "DomainSpec",
    "Mesh",
    "build_mesh",
    "perturb_domain",
    "save_mesh",
    "load_mesh",
    "dumbbell_vertices",
]

DOMAIN_KINDS = ("disk", "rectangle", "polygon", "ball3d", "perturbed_disk")


class GeometryError(ValueError):
    """Invalid or degenerate domain description."""


class PerturbationTooLarge(GeometryError):
    """The boundary displacement folds the domain onto itself."""


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "disk"
    aspect: float = 1.0
    vertices: tuple = ()
    amplitude: float = 0.0
    modes: tuple = (2, 3, 4, 5)
    seed: int = 0
    target_measure: float = 1.0

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.target_measure != 1.0:
            raise GeometryError("domains are always normalized to unit measure")
        if self.kind == "rectangle" and not self.aspect > 0:
            raise GeometryError("rectangle aspect must be positive")
        object.__setattr__(self, "vertices", tuple(tuple(map(float, v)) for v in self.vertices))
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))

    @property
    def dimension(self) -> int:
        return 3 if self.kind == "ball3d" else 2

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "rectangle":
            d["aspect"] = self.aspect
        elif self.kind == "polygon":
            d["vertices"] = [list(v) for v in self.vertices]
        if self.kind == "perturbed_disk" or self.amplitude:
            d.update(amplitude=self.amplitude, modes=list(self.modes), seed=self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        known = {"kind", "aspect", "vertices", "amplitude", "modes", "seed"}
        extra = set(d) - known
        if extra:
            raise GeometryError(f"unknown domain field(s): {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable mesh.  Identity (``is``) is the mesh tag used by fields.

    ``interior_index[i]`` is the unknown slot of node ``i`` or ``-1`` on
    the Dirichlet boundary.  ``quad_basis`` maps nodal values to values at
    ``quad_points``; ``quad_weights`` sum to the domain measure.
    """

    kind: str
    nodes: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray
    interior_index: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    quad_basis: sp.csr_matrix
    h_max: float
    dim: int = 2
    spec: DomainSpec | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary))

    @property
    def measure(self) -> float:
        return float(self.quad_weights.sum())

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def cell_areas(self) -> np.ndarray:
        """Signed cell measures (triangles) or lengths (radial cells)."""
        if self.kind == "radial":
            r = self.nodes[:, 0]
            return r[self.cells[:, 1]] - r[self.cells[:, 0]]
        return _signed_areas(self.nodes, self.cells)

    def __repr__(self):
        return (f"Mesh(kind={self.kind!r}, nodes={self.n_nodes}, cells={len(self.cells)}, "
                f"h_max={self.h_max:.4g})")


# --------------------------------------------------------------------------
# assembly of the mesh record

def _signed_areas(nodes, cells):
    a, b, c = nodes[cells[:, 0]], nodes[cells[:, 1]], nodes[cells[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _tri_mesh(nodes, cells, boundary, spec=None) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    area = _signed_areas(nodes, cells)
    flip = area < 0
    if flip.any():
        cells = cells.copy()
        cells[flip] = cells[flip][:, [0, 2, 1]]
        area = np.abs(area)
    if np.any(area <= 0):
        raise GeometryError("degenerate triangle in mesh")
    # edge-midpoint rule: exact for quadratics on each triangle
    nc = len(cells)
    pairs = [(0, 1), (1, 2), (2, 0)]
    qp = np.empty((3 * nc, 2))
    rows = np.repeat(np.arange(3 * nc), 2)
    cols = np.empty(6 * nc, dtype=np.int64)
    for k, (i, j) in enumerate(pairs):
        qp[k::3] = 0.5 * (nodes[cells[:, i]] + nodes[cells[:, j]])
        cols[2 * k::6] = cells[:, i]
        cols[2 * k + 1::6] = cells[:, j]
    basis = sp.csr_matrix((np.full(6 * nc, 0.5), (rows, cols)), shape=(3 * nc, len(nodes)))
    weights = np.repeat(area / 3.0, 3)
    edges = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    h_max = float(np.max(np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)))
    boundary = np.asarray(boundary, dtype=bool)
    index = np.full(len(nodes), -1, dtype=np.int64)
    index[~boundary] = np.arange(int((~boundary).sum()))
    for arr in (nodes, cells, boundary, index, qp, weights):
        arr.setflags(write=False)
    return Mesh("tri", nodes, cells, boundary, index, qp, weights, basis, h_max, 2, spec)


def _radial_mesh(radii, dim, spec=None) -> Mesh:
    r = np.asarray(radii, dtype=float)
    cells = np.column_stack([np.arange(len(r) - 1), np.arange(1, len(r))])
    gx, gw = np.polynomial.legendre.leggauss(3)
    sphere = 2.0 * math.pi ** (dim / 2) / gamma_fn(dim / 2)
    a, b = r[:-1, None], r[1:, None]
    t = 0.5 * (gx[None, :] + 1.0)
    qr = a + (b - a) * t
    qw = 0.5 * (b - a) * gw[None, :] * sphere * qr ** (dim - 1)
    nc = len(cells)
    rows = np.repeat(np.arange(3 * nc), 2)
    tq = np.tile(t[0], nc)
    vals = np.column_stack([1.0 - tq, tq]).ravel()
    cols = np.column_stack([np.repeat(cells[:, 0], 3), np.repeat(cells[:, 1], 3)]).ravel()
    basis = sp.csr_matrix((vals, (rows, cols)), shape=(3 * nc, len(r)))
    boundary = np.zeros(len(r), dtype=bool)
    boundary[-1] = True
    index = np.full(len(r), -1, dtype=np.int64)
    index[:-1] = np.arange(len(r) - 1)
    nodes = r[:, None].copy()
    qp = qr.reshape(-1, 1)
    weights = qw.ravel()
    for arr in (nodes, cells, boundary, index, qp, weights):
        arr.setflags(write=False)
    return Mesh("radial", nodes, cells, boundary, index, qp, weights, basis,
                float(np.max(np.diff(r))), dim, spec)


def _rescaled(mesh: Mesh) -> Mesh:
    """Dilate a mesh about the origin so that its measure is exactly one."""
    if mesh.kind == "radial":
        s = mesh.measure ** (-1.0 / mesh.dim)
        return _radial_mesh(mesh.nodes[:, 0] * s, mesh.dim, mesh.spec)
    s = mesh.measure ** -0.5
    return _tri_mesh(mesh.nodes * s, mesh.cells, mesh.boundary, mesh.spec)


# --------------------------------------------------------------------------
# generators

def _ring_disk(n_rings: int, radius: float = 1.0):
    """Concentric-ring triangulation: ring k holds 6k nodes."""
    pts = [np.zeros((1, 2))]
    angles = [np.zeros(1)]
    for k in range(1, n_rings + 1):
        th = 2 * np.pi * np.arange(6 * k) / (6 * k)
        pts.append(radius * k / n_rings * np.column_stack([np.cos(th), np.sin(th)]))
        angles.append(th)
    offsets = np.cumsum([0] + [len(a) for a in angles])
    cells = []
    # centre fan
    for j in range(6):
        cells.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(1, n_rings):
        inner, outer = angles[k], angles[k + 1]
        oi, oo = offsets[k], offsets[k + 1]
        ni, no = len(inner), len(outer)
        i = j = 0
        # merge the two angular sequences, always advancing the smaller next angle
        while i < ni or j < no:
            ai = inner[i + 1] if i + 1 < ni else 2 * np.pi
            ao = outer[j + 1] if j + 1 < no else 2 * np.pi
            if j < no and (i >= ni or ao <= ai):
                cells.append((oi + i % ni, oo + j % no, oo + (j + 1) % no))
                j += 1
            else:
                cells.append((oi + i % ni, oo + j % no, oi + (i + 1) % ni))
                i += 1
    nodes = np.vstack(pts)
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[offsets[n_rings]:] = True
    return nodes, np.array(cells), boundary


def _grid_rectangle(nx: int, ny: int, lx: float, ly: float):
    """Union-jack triangulation; mirror symmetric for even nx, ny."""
    x = np.linspace(-lx / 2, lx / 2, nx + 1)
    y = np.linspace(-ly / 2, ly / 2, ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    cells = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            # diagonal direction alternates with the parity of the cell
            if (i + j) % 2 == 0:
                cells += [(a, b, c), (a, c, d)]
            else:
                cells += [(a, b, d), (b, c, d)]
    boundary = ((np.isclose(nodes[:, 0], x[0]) | np.isclose(nodes[:, 0], x[-1]))
                | (np.isclose(nodes[:, 1], y[0]) | np.isclose(nodes[:, 1], y[-1])))
    return nodes, np.array(cells), boundary


def _polygon_mesh(vertices, resolution: int):
    from scipy.spatial import Delaunay

    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
        raise GeometryError("polygon needs at least three planar vertices")
    ring = LinearRing(verts)
    poly = Polygon(verts)
    if not ring.is_simple or not poly.is_valid or poly.area < 1e-12 * max(1.0, ring.length ** 2):
        raise GeometryError("degenerate or self-intersecting polygon")
    # normalise before meshing so that `resolution` controls h relative to unit area
    c = np.array(poly.centroid.coords[0])
    verts = (verts - c) / math.sqrt(poly.area)
    poly = Polygon(verts)
    if not LinearRing(verts).is_ccw:
        verts = verts[::-1]
    h = 1.0 / resolution
    bpts = []
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / h)))
        t = np.arange(n) / n
        bpts.append(a[None, :] + t[:, None] * (b - a)[None, :])
    bpts = np.vstack(bpts)
    xmin, ymin, xmax, ymax = poly.bounds
    gx = np.arange(xmin + h / 2, xmax, h)
    gy = np.arange(ymin + h / 2, ymax, h * math.sqrt(3) / 2)
    interior = []
    for j, yv in enumerate(gy):
        shift = 0.5 * h if j % 2 else 0.0
        for xv in gx + shift:
            pt = Point(xv, yv)
            if poly.contains(pt) and poly.exterior.distance(pt) > 0.45 * h:
                interior.append((xv, yv))
    nodes = np.vstack([bpts, np.array(interior).reshape(-1, 2)])
    tri = Delaunay(nodes)
    cells = tri.simplices
    cent = nodes[cells].mean(axis=1)
    keep = np.array([poly.contains(Point(*p)) for p in cent])
    cells = cells[keep]
    area = np.abs(_signed_areas(nodes, cells))
    cells = cells[area > 1e-14 * h * h]
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[:len(bpts)] = True
    used = np.unique(cells)
    if len(used) != len(nodes):
        remap = np.full(len(nodes), -1)
        remap[used] = np.arange(len(used))
        nodes, boundary, cells = nodes[used], boundary[used], remap[cells]
    return nodes, cells, boundary


def dumbbell_vertices(neck_width: float = 0.25, lobes=(1.0, 0.99), neck_length: float = 0.6):
    """Two squares of side ``lobes`` joined by a straight channel.

    Slightly unequal lobes break the reflection symmetry; the resulting
    branch has a pair of turning points for large p.
    """
    a, b = lobes
    h, w = neck_length / 2, neck_width / 2
    return ((-h - a, -a / 2), (-h, -a / 2), (-h, -w), (h, -w), (h, -b / 2), (h + b, -b / 2),
            (h + b, b / 2), (h, b / 2), (h, w), (-h, w), (-h, a / 2), (-h - a, a / 2))


def build_mesh(spec: DomainSpec, resolution: int) -> Mesh:
    """Mesh a domain and dilate it to unit measure.

    ``resolution`` is roughly the number of cells across the domain; the
    mesh size scales like ``1/resolution``.
    """
    if int(resolution) != resolution or resolution < 8:
        raise GeometryError("resolution must be an integer >= 8")
    resolution = int(resolution)
    kind = spec.kind
    if kind in ("disk", "perturbed_disk"):
        nodes, cells, boundary = _ring_disk(max(4, resolution // 2), 1.0 / math.sqrt(math.pi))
        mesh = _rescaled(_tri_mesh(nodes, cells, boundary, spec))
        if kind == "perturbed_disk":
            mesh = perturb_domain(mesh, spec.amplitude, spec.modes, spec.seed)
        return mesh
    if kind == "rectangle":
        lx, ly = math.sqrt(spec.aspect), 1.0 / math.sqrt(spec.aspect)
        nx = max(2, 2 * int(round(resolution * lx / 2)))
        ny = max(2, 2 * int(round(resolution * ly / 2)))
        nodes, cells, boundary = _grid_rectangle(nx, ny, lx, ly)
        return _rescaled(_tri_mesh(nodes, cells, boundary, spec))
    if kind == "polygon":
        nodes, cells, boundary = _polygon_mesh(spec.vertices, resolution)
        mesh = _rescaled(_tri_mesh(nodes, cells, boundary, spec))
        return perturb_domain(mesh, spec.amplitude, spec.modes, spec.seed) if spec.amplitude else mesh
    if kind == "ball3d":
        dim = 3
        radius = (gamma_fn(dim / 2 + 1) / math.pi ** (dim / 2)) ** (1.0 / dim)
        return _rescaled(_radial_mesh(np.linspace(0.0, radius, 2 * resolution + 1), dim, spec))
    raise GeometryError(f"unknown domain kind {kind!r}")


# --------------------------------------------------------------------------
# domain variations

def _fourier_coefficients(modes: Sequence[int], seed: int):
    rng = np.random.default_rng(seed)
    modes = np.asarray(modes, dtype=int)
    c = rng.standard_normal(len(modes))
    c = c / np.sum(np.abs(c)) if np.any(c) else c
    phase = rng.uniform(0.0, 2 * np.pi, len(modes))
    return modes, c, phase


def _displacement(x, amplitude, modes, coef, phase, radius):
    """Radial displacement a*R*sum c_m (r/R)^{m+1} cos(m th + ph_m).

    The factor (r/R)^{m+1} keeps the map polynomial (hence smooth) at the
    origin and equal to the boundary Fourier series on r = R.
    """
    r = np.hypot(x[:, 0], x[:, 1])
    th = np.arctan2(x[:, 1], x[:, 0])
    s = r / radius
    dr = np.zeros_like(r)
    for m, c, ph in zip(modes, coef, phase):
        dr += c * s ** (m + 1) * np.cos(m * th + ph)
    dr *= amplitude * radius
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, dr / np.where(r > 0, r, 1.0), 0.0)
    return x * scale[:, None]


def perturb_domain(base: Mesh, amplitude: float, modes: Sequence[int], seed: int) -> Mesh:
    """Apply a seeded Fourier boundary displacement and renormalise the measure.

    Connectivity is kept.  Raises :class:`PerturbationTooLarge` when the
    Jacobian of the map changes sign at a quadrature point or a cell flips.
    """
    if base.kind != "tri":
        raise GeometryError("domain perturbations need a planar triangle mesh")
    if amplitude == 0:
        return base
    modes, coef, phase = _fourier_coefficients(modes, seed)
    radius = float(np.max(np.hypot(base.nodes[:, 0], base.nodes[:, 1])))

    def mapping(x):
        return x + _displacement(x, amplitude, modes, coef, phase, radius)

    # Jacobian determinant of the continuous map at the quadrature points
    eps = 1e-6 * radius
    q = base.quad_points
    ex, ey = np.array([[eps, 0.0]]), np.array([[0.0, eps]])
    dx = (mapping(q + ex) - mapping(q - ex)) / (2 * eps)
    dy = (mapping(q + ey) - mapping(q - ey)) / (2 * eps)
    jac = dx[:, 0] * dy[:, 1] - dx[:, 1] * dy[:, 0]
    if np.any(jac <= 0):
        raise PerturbationTooLarge(
            f"Jacobian changes sign (min det {jac.min():.3g}); reduce amplitude {amplitude}")
    nodes = mapping(base.nodes)
    if np.any(_signed_areas(nodes, base.cells) <= 0):
        raise PerturbationTooLarge("perturbation inverts mesh cells")
    for loop in _boundary_loops(base.cells):
        if not LinearRing(nodes[loop]).is_simple:
            raise GeometryError("perturbed boundary self-intersects")
    spec = base.spec
    if spec is None or spec.kind == "disk":
        new_spec = DomainSpec("perturbed_disk", amplitude=amplitude, modes=tuple(modes), seed=seed)
    else:
        new_spec = replace(spec, amplitude=amplitude, modes=tuple(int(m) for m in modes), seed=seed)
    return _rescaled(_tri_mesh(nodes, base.cells, base.boundary, new_spec))


def _boundary_loops(cells):
    """Closed node loops formed by the edges that belong to a single cell."""
    edges = np.sort(np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    nbr = {}
    for a, b in uniq[counts == 1]:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))
    loops, seen = [], set()
    for start in sorted(nbr):
        if start in seen:
            continue
        loop, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = [v for v in nbr[cur] if v != prev]
            if not nxt or nxt[0] == start:
                break
            prev, cur = cur, nxt[0]
            if cur in seen:
                break
            seen.add(cur)
            loop.append(cur)
        loops.append(np.array(loop))
    return loops


# --------------------------------------------------------------------------
# plain-text mesh files

def save_mesh(mesh: Mesh, path) -> None:
    """Write ``kind dim n_nodes n_cells verts_per_cell`` then nodes, cells, flags."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.kind} {mesh.dim} {mesh.n_nodes} {len(mesh.cells)} {mesh.cells.shape[1]}\n")
        for row in mesh.nodes:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        for row in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
        for b in mesh.boundary:
            fh.write(f"{int(b)}\n")


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        kind, dim, nn, nc, nv = fh.readline().split()
        dim, nn, nc, nv = int(dim), int(nn), int(nc), int(nv)
        nodes = np.array([list(map(float, fh.readline().split())) for _ in range(nn)])
        cells = np.array([list(map(int, fh.readline().split())) for _ in range(nc)], dtype=np.int64)
        boundary = np.array([int(fh.readline()) for _ in range(nn)], dtype=bool)
    if kind == "radial":
        return _radial_mesh(nodes[:, 0], dim)
    if kind != "tri":
        raise GeometryError(f"unknown mesh kind {kind!r} in {path}")
    return _tri_mesh(nodes, cells.reshape(nc, nv), boundary)
