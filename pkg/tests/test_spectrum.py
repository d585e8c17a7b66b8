import math

import numpy as np
import pytest

from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import PlasmaConfig, newton_solve, trivial_state
from plasmacont.oracles import (dense_projected_sigmas, disk_dirichlet_eigenvalue, radial_sobolev_constant,
                                square_dirichlet_eigenvalue)
from plasmacont.spectrum import EigenSolverError, eigenpairs, identity_check, sobolev_constant

# radial shooting values on the unit-area disk, frozen
LAMBDA_DISK_T3 = 14.26125
LAMBDA_DISK_T4 = 11.75197


@pytest.fixture(scope="module")
def coarse_disk():
    return build_mesh(DomainSpec("disk"), 10)


def test_lambda0_against_dense(coarse_disk):
    st = trivial_state(coarse_disk, PlasmaConfig())
    sparse = eigenpairs(st, 4, method="sparse").sigmas
    dense = dense_projected_sigmas(st, 4)
    assert np.allclose(sparse, dense, rtol=1e-6, atol=0)


def test_dense_path_agrees(coarse_disk):
    st = newton_solve(coarse_disk, PlasmaConfig(), 6.0)
    a = eigenpairs(st, 4, method="dense").sigmas
    b = eigenpairs(st, 4, method="sparse").sigmas
    assert np.allclose(a, b, rtol=1e-9)


def test_constants_are_projected_out(disk_state):
    for c in (1.0, -3.5):
        const = np.full_like(disk_state.psi_q, c)
        assert disk_state.mean(const - disk_state.mean(const)) == pytest.approx(0.0, abs=1e-14)


def test_orthogonality_and_projection(disk_state):
    res = eigenpairs(disk_state, 4)
    proj = [phi.at_quad() - m for phi, m in zip(res.phis, res.means)]
    for i in range(4):
        assert abs(disk_state.mean(proj[i])) <= 1e-12
        for j in range(i):
            num = disk_state.mean(proj[i] * proj[j])
            den = math.sqrt(disk_state.mean(proj[i] ** 2) * disk_state.mean(proj[j] ** 2))
            assert abs(num) / den <= 1e-8


def test_identity_at_lambda1(disk_state):
    res = eigenpairs(disk_state, 1)
    assert res.identity_residuals[0] <= 1e-8


def test_identity_at_lambda0(disk32):
    st = trivial_state(disk32, PlasmaConfig())
    res = eigenpairs(st, 4)
    assert np.all(res.identity_residuals <= 1e-8)
    # eigenfields with zero mean make both sides vanish
    for k in range(4):
        chk = identity_check(st, res.sigmas[k], res.phis[k])
        if abs(res.means[k]) < 1e-8:
            assert abs(chk["lhs"]) < 1e-8 and abs(chk["rhs"]) < 1e-6


def test_identity_at_fold(dumbbell_branch):
    f = next(b for b in dumbbell_branch if b.is_fold)
    chk = identity_check(f.state, 0.0, f.fold.phi)
    assert chk["residual"] <= 1e-6


def test_mass_identity(disk_state):
    res = eigenpairs(disk_state, 1)
    chk = identity_check(disk_state, res.sigmas[0], res.phis[0])
    assert chk["mass_identity_residual"] <= 1e-8


def test_sobolev_t2(disk64):
    assert sobolev_constant(disk64, 2.0).Lambda == pytest.approx(disk_dirichlet_eigenvalue(), rel=5e-3)
    sq = build_mesh(DomainSpec("rectangle"), 64)
    assert sobolev_constant(sq, 2.0).Lambda == pytest.approx(square_dirichlet_eigenvalue(), rel=5e-3)


def test_radial_oracle_t2():
    assert radial_sobolev_constant(2.0) == pytest.approx(disk_dirichlet_eigenvalue(), rel=1e-8)


def test_radial_oracle_frozen():
    assert radial_sobolev_constant(3.0) == pytest.approx(LAMBDA_DISK_T3, rel=1e-6)
    assert radial_sobolev_constant(4.0) == pytest.approx(LAMBDA_DISK_T4, rel=1e-6)


@pytest.mark.parametrize("t,ref", [(3.0, LAMBDA_DISK_T3), (4.0, LAMBDA_DISK_T4)])
def test_sobolev_refinement(disk32, disk64, t, ref):
    a = sobolev_constant(disk32, t).Lambda
    b = sobolev_constant(disk64, t).Lambda
    assert a == pytest.approx(ref, rel=5e-3)
    assert b == pytest.approx(ref, rel=5e-3)
    assert abs(b - ref) < abs(a - ref)


def test_sobolev_ball3d():
    # t = 2 on the unit-volume ball: π² / R²
    m = build_mesh(DomainSpec("ball3d"), 64)
    R = (3 / (4 * math.pi)) ** (1 / 3)
    assert sobolev_constant(m, 2.0).Lambda == pytest.approx(math.pi ** 2 / R ** 2, rel=5e-3)
    assert sobolev_constant(m, 4.0).Lambda == pytest.approx(radial_sobolev_constant(4.0, N=3), rel=5e-3)


def test_errors(coarse_disk, disk_state):
    with pytest.raises(EigenSolverError):
        eigenpairs(disk_state, disk_state.mesh.n_interior, method="sparse")
    with pytest.raises(ValueError):
        sobolev_constant(build_mesh(DomainSpec("ball3d"), 16), 7.0)
