import math

import numpy as np
import pytest

from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import (DomainOfDefinitionError, NoConvergence, PlasmaConfig, jacobian_apply,
                               make_state, newton_solve, residual, residual_norm, trivial_state)
from plasmacont.operators import Field, operators_for
from plasmacont.oracles import fd_jacobian_check, picard_solve


def test_conjugate_exponent():
    for p in (1.5, 2.0, 3.0, 7.0):
        c = PlasmaConfig(p=p)
        assert 1 / c.p + 1 / c.q == pytest.approx(1.0, abs=1e-15)
    assert PlasmaConfig(p=2.0, N=2).p_critical == math.inf
    assert PlasmaConfig(p=2.0, N=3).p_critical == 3.0
    with pytest.raises(ValueError):
        PlasmaConfig(p=3.0, N=3)
    with pytest.raises(ValueError):
        PlasmaConfig(p=1.0)


def test_residual_at_trivial(disk32):
    st = trivial_state(disk32, PlasmaConfig())
    F, g = residual(st)
    assert residual_norm(operators_for(disk32), F.values, g) <= 1e-10


def test_mass_residual_alpha2(disk32):
    ops = operators_for(disk32)
    for p in (2.0, 3.0):
        st = make_state(disk32, PlasmaConfig(p=p), 0.0, 2.0, ops.green_q(ops.ones_q))
        assert residual(st)[1] == pytest.approx(2 ** p - 1, rel=1e-12)


def test_jacobian_zero_direction(disk_state):
    dF, dg = jacobian_apply(disk_state, 0.0, Field.zeros(disk_state.mesh))
    assert np.all(dF.values == 0) and dg == 0


def test_jacobian_constraint_row_at_zero(disk32):
    for p in (1.5, 2.0, 4.0):
        st = trivial_state(disk32, PlasmaConfig(p=p))
        _, dg = jacobian_apply(st, 1.0, Field.zeros(disk32))
        assert dg == pytest.approx(p, rel=1e-12)


def test_jacobian_fd(disk_state):
    rng = np.random.default_rng(3)
    d = Field(disk_state.mesh, rng.standard_normal(disk_state.mesh.n_interior) * 1e-2)
    assert fd_jacobian_check(disk_state, 0.3, d, h=1e-5) <= 1e-6


def test_newton_lambda0(disk32):
    ops = operators_for(disk32)
    g1 = ops.green_q(ops.ones_q)
    st = newton_solve(disk32, PlasmaConfig(), 0.0, guess=(0.9, 0.9 * g1))
    assert st.alpha == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(st.psi.values - g1)) <= 1e-10


def test_alpha_first_order(disk32):
    # α'(0) = -∫ψ_0 = -2E_0; compare the solver's difference quotient with the discrete E_0
    E0 = trivial_state(disk32, PlasmaConfig()).energy
    h = 1e-4
    slope = (newton_solve(disk32, PlasmaConfig(), h).alpha - 1.0) / h
    assert slope == pytest.approx(-2 * E0, rel=1e-3)
    # and the first-order value at λ = 0.1 with the continuum E_0 = 1/(16π)
    a = newton_solve(disk32, PlasmaConfig(), 0.1).alpha
    assert a == pytest.approx(1 - 0.1 / (8 * math.pi), abs=2e-5)


def test_fixed_point_oracle(disk32):
    st = newton_solve(disk32, PlasmaConfig(), 1.0)
    alpha, psi = picard_solve(disk32, 2.0, 1.0)
    assert st.alpha == pytest.approx(alpha, abs=1e-8)
    assert np.max(np.abs(st.psi.values - psi)) <= 1e-8 * np.max(psi)


def test_state_invariants(disk_state):
    st = disk_state
    assert abs(st.mass - 1) <= st.config.newton_tol
    assert st.alpha < 1
    assert np.all(st.psi.values > 0)
    assert st.energy == pytest.approx(st.dirichlet_energy, rel=1e-8)


def test_residual_at_solution(disk_state):
    F, g = residual(disk_state)
    assert residual_norm(operators_for(disk_state.mesh), F.values, g) <= disk_state.config.newton_tol


def test_domain_error(disk32):
    with pytest.raises(DomainOfDefinitionError):
        newton_solve(disk32, PlasmaConfig(), 40.0)
    ops = operators_for(disk32)
    bad = make_state(disk32, PlasmaConfig(), 1.0, -1.0, ops.green_q(ops.ones_q))
    with pytest.raises(DomainOfDefinitionError):
        residual(bad)


def test_no_convergence():
    m = build_mesh(DomainSpec("disk"), 16)
    with pytest.raises(NoConvergence):
        newton_solve(m, PlasmaConfig(max_iters=1), 8.0)
