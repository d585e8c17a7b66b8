import math

import numpy as np
import pytest

from plasmacont.continuation import endpoint_extrapolation
from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import PlasmaConfig, newton_solve, trivial_state
from plasmacont.spectrum import eigenpairs, sobolev_constant
from plasmacont.variational import (BracketError, MinimizerError, free_energy, identity_suite,
                                    lambda_star_star, minimize_free_energy, psi_I_check)


@pytest.fixture(scope="module")
def lss32(disk32):
    return lambda_star_star(disk32, PlasmaConfig())


def test_lambda0(disk32):
    for p in (1.5, 2.0, 3.0):
        it = minimize_free_energy(disk32, PlasmaConfig(p=p), 0.0)
        assert np.allclose(it.rho, 1.0, atol=1e-12)
        assert it.alpha == pytest.approx(1.0, abs=1e-12)
        assert it.J_value == pytest.approx(p / (p + 1), rel=1e-12)


def test_free_energy_uniform(disk32):
    E0 = trivial_state(disk32, PlasmaConfig()).energy
    rho = np.ones_like(disk32.quad_weights)
    # J(1) = p/(p+1) - λ E_0 since ½∫G[1] = E_0
    assert free_energy(disk32, 2.0, 3.0, rho) == pytest.approx(2 / 3 - 3.0 * E0, rel=1e-12)


@pytest.mark.parametrize("mesh_name", ["disk32", "square32"])
def test_agrees_with_newton(mesh_name, request):
    m = request.getfixturevalue(mesh_name)
    cfg = PlasmaConfig()
    top = 0.9 * sobolev_constant(m, 4.0).Lambda / 2
    it = None
    for lam in np.linspace(top / 4, top, 4):
        it = minimize_free_energy(m, cfg, lam, initial=it)
        nst = newton_solve(m, cfg, lam)
        assert it.alpha == pytest.approx(nst.alpha, abs=1e-6)
        assert eigenpairs(it.as_state(), 1).sigmas[0] >= -1e-6


def test_J_non_increasing(disk32, lss32):
    it, J = None, []
    for lam in np.linspace(0, 0.95 * lss32, 12):
        it = minimize_free_energy(disk32, PlasmaConfig(), lam, initial=it)
        J.append(it.J_value)
    assert np.all(np.diff(J) <= 0)


def test_lambda_star_star(disk32, disk_branch, lss32):
    assert lss32 == pytest.approx(endpoint_extrapolation(disk_branch)["lambda_infinity"], rel=0.01)
    assert lss32 > sobolev_constant(disk32, 4.0).Lambda / 2


def test_I_star_star_through_dual(disk_branch, lss32):
    from plasmacont.acceptance import I_star_star_from_branch

    assert I_star_star_from_branch(disk_branch) == pytest.approx(lss32 ** 2, rel=0.01)


def test_identity_at_lambda0(disk32):
    rep = identity_suite(minimize_free_energy(disk32, PlasmaConfig(), 0.0))
    assert rep["fitted_constant"] == pytest.approx(0.0, abs=1e-12)
    assert rep["identity_residual"] == 0.0


def test_identity_on_grid(disk32):
    its, it = [], None
    for lam in np.linspace(0.0, 1.0, 6):
        it = minimize_free_energy(disk32, PlasmaConfig(), lam, initial=it)
        its.append(it)
    rep = identity_suite(its)
    assert rep["identity_residual"] <= 1e-8
    # the same check from Newton states
    rep2 = identity_suite([newton_solve(disk32, PlasmaConfig(), lam) for lam in (0.5, 1.0)])
    assert rep2["identity_residual"] <= 1e-8
    assert rep["fitted_constant"] == pytest.approx(rep2["fitted_constant"], abs=1e-8)


def test_energy_bound_ball3d():
    m = build_mesh(DomainSpec("ball3d"), 32)
    st = newton_solve(m, PlasmaConfig(p=2.0, N=3), 1.0)
    rep = identity_suite(st)
    (row,) = rep["energy_bound"]
    assert row["holds"] and row["bound"] == pytest.approx(2 * (1 - st.alpha))
    assert rep["energy_bound_holds"]


def test_psi_I_local_min(disk_branch):
    mid = disk_branch[len(disk_branch) // 2].state
    chk = psi_I_check(mid, n_competitors=10)
    assert chk.local_min
    assert all(g > 0 for g in chk.competitor_gaps)
    assert chk.mass_residual <= 1e-8
    assert chk.I == pytest.approx(mid.lam ** 2, rel=1e-14)


def test_psi_I_small_lambda(disk32):
    st = newton_solve(disk32, PlasmaConfig(), 1e-3)
    chk = psi_I_check(st, n_competitors=2)
    assert math.isfinite(chk.Psi_I_value)


def test_errors(disk32):
    with pytest.raises(MinimizerError) as exc:
        minimize_free_energy(disk32, PlasmaConfig(), 5.0, max_iter=1)
    assert exc.value.iterate is not None
    with pytest.raises(BracketError):
        lambda_star_star(disk32, PlasmaConfig(), lambda_cap=6.0)
