import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.operators import (Field, MeshMismatch, WeightError, green_solve, integrate,
                                  operators_for, weighted_mean)



def test_green_center(disk64):
    u = green_solve(disk64, 1.0)
    # (R² - r²)/4 at r = 0
    assert u((0.0, 0.0))[0] == pytest.approx(1 / (4 * math.pi), rel=2e-3)


def test_green_integral(disk64):
    u = green_solve(disk64, 1.0)
    assert integrate(disk64, u) == pytest.approx(1 / (8 * math.pi), rel=2e-3)


def test_green_zero_source(disk16):
    assert np.all(green_solve(disk16, 0.0).values == 0)


def test_integrate_one(disk32, square32):
    assert integrate(disk32, 1.0) == pytest.approx(1.0, abs=1e-10)
    assert integrate(square32, 1.0) == pytest.approx(1.0, abs=1e-10)


def test_integrate_nonnegative(disk16):
    f = Field(disk16, np.abs(np.sin(np.arange(disk16.n_interior))))
    assert integrate(disk16, f) >= 0
    assert integrate(disk16, (f, f)) >= 0


def test_weighted_mean_trivial(disk16):
    f = Field(disk16, np.cos(np.arange(disk16.n_interior)))
    assert weighted_mean(disk16, 1.0, f) == pytest.approx(integrate(disk16, f), rel=1e-12)
    assert weighted_mean(disk16, f * f + Field.zeros(disk16), 0.0) == 0.0
    with pytest.raises(WeightError):
        weighted_mean(disk16, 0.0, f)


def _gauss3(mesh, nodal_fns):
    """Degree-2 exact three-point interior rule, independent of the mesh quadrature."""
    P, T = mesh.nodes, mesh.cells
    bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    area = mesh.cell_areas()
    out = 0.0
    vals = [fn[T] for fn in nodal_fns]         # (cells, 3) each
    for b in bary:
        prod = np.ones(len(T))
        for v in vals:
            prod = prod * (v @ b)
        out += float(area @ prod) / 3
    return out


def test_weighted_mean_oracle(disk_state):
    st = disk_state
    mesh = st.mesh
    # for p = 2 the weight (α + λψ)^{p-1} is linear, so W ψ is exactly quadratic
    base = st.alpha + st.lam * st.psi.full()
    want = _gauss3(mesh, [base, st.psi.full()]) / _gauss3(mesh, [base])
    got = weighted_mean(mesh, st.weight, st.psi_q)
    assert got == pytest.approx(want, rel=1e-10)


def test_boundary_evaluation_is_zero(disk16):
    f = Field(disk16, np.ones(disk16.n_interior))
    pts = disk16.nodes[disk16.boundary]
    assert np.all(f(pts) == 0.0)


def test_mesh_mismatch(disk16):
    other = build_mesh(DomainSpec("disk"), 16)
    with pytest.raises(MeshMismatch):
        Field(disk16, np.ones(disk16.n_interior)) + Field(other, np.ones(other.n_interior))


def test_stiffness_spd(disk16):
    A = operators_for(disk16).A
    assert abs(A - A.T).max() < 1e-13
    lmin = spla.eigsh(A, k=1, sigma=0, which="LM")[0][0]
    assert lmin > 0


def test_mass_row_sums(disk32, square32):
    for m in (disk32, square32):
        B = m.quad_basis                       # full nodal values -> quadrature points
        M_full = B.T @ (m.quad_weights[:, None] * B.toarray())
        assert float(M_full.sum(axis=1).sum()) == pytest.approx(1.0, abs=1e-10)
        # interior mass matrix is the restriction
        M = operators_for(m).M.toarray()
        inner = ~m.boundary
        assert np.allclose(M, M_full[np.ix_(inner, inner)], atol=1e-15)
