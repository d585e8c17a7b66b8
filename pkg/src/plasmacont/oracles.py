"""Independent reference computations used to cross-check the solvers.

Nothing here reuses the solver code paths it is meant to check: the radial
Sobolev constant comes from an ODE shooting problem, the projected
eigenvalues from an unsymmetric bordered pencil, the fixed-λ solution from a
damped Picard iteration.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.special import gamma as gamma_fn, jn_zeros

from .operators import operators_for

__all__ = [
    "unit_ball_radius",
    "disk_green_center",
    "disk_E0",
    "disk_E_star",
    "disk_dirichlet_eigenvalue",
    "square_dirichlet_eigenvalue",
    "radial_sobolev_constant",
    "dense_projected_sigmas",
    "picard_solve",
    "polygon_measure",
    "fd_jacobian_check",
]


def unit_ball_radius(N: int) -> float:
    """Radius of the N-ball of unit measure."""
    return (gamma_fn(N / 2 + 1) / math.pi ** (N / 2)) ** (1.0 / N)


def disk_green_center(N: int = 2) -> float:
    """G[1] at the centre of the unit-measure ball: R²/(2N)."""
    return unit_ball_radius(N) ** 2 / (2 * N)


def disk_E0(N: int = 2) -> float:
    """½∫G[1] on the unit-measure ball: R²/(2N(N+2))."""
    return unit_ball_radius(N) ** 2 / (2 * N * (N + 2))


def disk_E_star(p: float) -> float:
    return (p + 1) / (16 * math.pi)


def disk_dirichlet_eigenvalue() -> float:
    return math.pi * jn_zeros(0, 1)[0] ** 2


def square_dirichlet_eigenvalue() -> float:
    return 2 * math.pi ** 2


def radial_sobolev_constant(t: float, N: int = 2, rtol: float = 1e-12) -> float:
    """Λ(B, t) on the unit-measure ball from the radial ground state.

    Solve u'' + (N-1)u'/r + u^{t-1} = 0, u(0) = 1, u'(0) = 0 up to its first
    zero R0.  With K = ∫|∇u|² over B_{R0}, the Euler-Lagrange identity gives
    ∫u^t = K and Λ(B_{R0}, t) = K^{1-2/t}; scaling to the unit-measure radius
    R multiplies by (R/R0)^{N-2-2N/t}.  t = 2 reduces to the first Dirichlet
    eigenvalue.
    """
    def rhs(r, y):
        u, du = y
        src = np.sign(u) * abs(u) ** (t - 1.0)
        if r == 0:
            return [du, -src / N]
        return [du, -(N - 1) / r * du - src]

    def hit(r, y):
        return y[0]

    hit.terminal, hit.direction = True, -1
    # series start away from the singular point
    r0 = 1e-6
    y0 = [1.0 - r0 ** 2 / (2 * N), -r0 / N]
    sol = solve_ivp(rhs, (r0, 1e3), y0, events=hit, rtol=rtol, atol=1e-14, method="DOP853",
                    dense_output=True)
    R0 = float(sol.t_events[0][0])
    sphere = 2 * math.pi ** (N / 2) / gamma_fn(N / 2)
    rr = np.linspace(r0, R0, 20001)
    du = sol.sol(rr)[1]
    K = sphere * np.trapezoid(du ** 2 * rr ** (N - 1), rr) if hasattr(np, "trapezoid") else \
        sphere * np.trapz(du ** 2 * rr ** (N - 1), rr)
    R = unit_ball_radius(N)
    return float(K ** (1 - 2.0 / t) * (R / R0) ** (N - 2 - 2.0 * N / t))


def dense_projected_sigmas(state, k: int = 4) -> np.ndarray:
    """Lowest σ from the bordered pencil in (φ, c), c the weighted mean.

        A φ = κ (M_W φ - b c),    m c = b^T φ,    σ = κ - λp.

    The pencil is unsymmetric with infinite eigenvalues; those are dropped.
    """
    ops = operators_for(state.mesh)
    n = ops.n
    W = state.weight
    MW = ops.mass_matrix(W).toarray()
    b = ops.load(W)
    m = ops.integrate_q(W)
    L = np.zeros((n + 1, n + 1))
    R = np.zeros((n + 1, n + 1))
    L[:n, :n] = ops.A.toarray()
    L[n, :n] = -b
    L[n, n] = m
    R[:n, :n] = MW
    R[:n, n] = -b
    vals = sla.eig(L, R, right=False)
    vals = vals[np.isfinite(vals)]
    vals = np.sort(vals.real[np.abs(vals.imag) < 1e-8 * np.maximum(1.0, np.abs(vals.real))])
    return vals[:k] - state.lam * state.config.p


def picard_solve(mesh, p: float, lam: float, theta: float = 0.5, tol: float = 1e-12,
                 max_iter: int = 100000):
    """Damped Picard iteration ψ <- (1-θ)ψ + θ G[(α + λψ)^p], α from the mass equation.

    The scalar equation ∫(α + λψ)^p = 1 is solved by Newton's method in α.
    Returns ``(alpha, psi_interior_values)``.
    """
    ops = operators_for(mesh)
    w, Q = mesh.quad_weights, ops.Q
    psi = ops.solve(ops.load(np.ones_like(w)))
    alpha = 1.0
    for _ in range(max_iter):
        pq = Q @ psi
        for _ in range(100):
            base = np.maximum(alpha + lam * pq, 0.0)
            f = float(w @ base ** p) - 1.0
            df = p * float(w @ base ** (p - 1))
            step = f / df
            alpha -= step
            if abs(step) < 1e-16 * max(1.0, abs(alpha)):
                break
        target = ops.solve(ops.load(np.maximum(alpha + lam * pq, 0.0) ** p))
        new = (1 - theta) * psi + theta * target
        if np.max(np.abs(new - psi)) < tol * np.max(np.abs(new)):
            psi = new
            break
        psi = new
    return alpha, psi


def polygon_measure(points) -> float:
    """Shoelace area of a closed polygon given as an (n, 2) array."""
    x, y = np.asarray(points, dtype=float).T
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def fd_jacobian_check(state, d_alpha: float, d_psi, h: float = 1e-5) -> float:
    """Relative mismatch between jacobian_apply and central differences of residual."""
    from .newton import jacobian_apply, make_state, residual

    def res(eps):
        st = make_state(state.mesh, state.config, state.lam, state.alpha + eps * d_alpha,
                        state.psi.values + eps * d_psi.values)
        F, g = residual(st)
        return np.concatenate([F.values, [g]])

    fd = (res(h) - res(-h)) / (2 * h)
    dF, dg = jacobian_apply(state, d_alpha, d_psi)
    an = np.concatenate([dF.values, [dg]])
    return float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300))
