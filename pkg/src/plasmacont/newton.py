"""Newton solver for the constrained problem at fixed λ.

Unknowns are the interior values of ψ and the scalar α.  The discrete
residual is

    F(ψ, α) = A ψ - load((α + λψ)^p),      g(ψ, α) = ∫ (α + λψ)^p - 1,

with the nonlinearity evaluated at quadrature points.  Its Jacobian is the
bordered matrix

    [ A - λp M_W    -p b_W ]         W = (α + λψ)^{p-1},
    [ λp b_W^T       p m   ]         b_W = load(W),  m = ∫ W.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh
from .operators import Field, operators_for

__all__ = [
    "SolverError",
    "DomainOfDefinitionError",
    "NoConvergence",
    "NearFold",
    "PlasmaConfig",
    "PlasmaState",
    "make_state",
    "residual",
    "residual_norm",
    "jacobian_apply",
    "bordered_matrix",
    "newton_solve",
    "trivial_state",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for solver failures."""


class DomainOfDefinitionError(SolverError):
    """α + λψ dropped below the admissible floor."""


class NoConvergence(SolverError):
    """Newton iterations exhausted."""


class NearFold(SolverError):
    """The bordered Jacobian is numerically singular."""


@dataclass(frozen=True)
class PlasmaConfig:
    p: float = 2.0
    N: int = 2
    newton_tol: float = 1e-10
    max_iters: int = 30
    positivity_floor: float | None = None   # None -> α/2

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("exponent p must exceed 1")
        if self.N < 2:
            raise ValueError("dimension N must be at least 2")
        if self.N >= 3 and not self.p < self.N / (self.N - 2):
            raise ValueError(f"p must be below N/(N-2) = {self.N / (self.N - 2):g}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def p_critical(self) -> float:
        return math.inf if self.N == 2 else self.N / (self.N - 2)

    def floor(self, alpha: float) -> float:
        return 0.5 * alpha if self.positivity_floor is None else self.positivity_floor


@dataclass(frozen=True, eq=False)
class PlasmaState:
    """A triple (λ, α, ψ) and the derived quantities at quadrature points."""

    lam: float
    alpha: float
    psi: Field
    config: PlasmaConfig
    converged: bool = True
    iterations: int = 0
    residual_norm: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.psi.mesh

    @property
    def psi_q(self) -> np.ndarray:
        if "psi_q" not in self._cache:
            self._cache["psi_q"] = self.psi.at_quad()
        return self._cache["psi_q"]

    @property
    def base(self) -> np.ndarray:
        """α + λψ at quadrature points."""
        return self.alpha + self.lam * self.psi_q

    @property
    def rho(self) -> np.ndarray:
        """Density (α + λψ)^p at quadrature points."""
        return np.power(np.maximum(self.base, 0.0), self.config.p)

    @property
    def weight(self) -> np.ndarray:
        """ρ^{1/q} = (α + λψ)^{p-1} at quadrature points."""
        return np.power(np.maximum(self.base, 0.0), self.config.p - 1.0)

    @property
    def m_lambda(self) -> float:
        return float(np.dot(self.mesh.quad_weights, self.weight))

    @property
    def mass(self) -> float:
        return float(np.dot(self.mesh.quad_weights, self.rho))

    @property
    def energy(self) -> float:
        """½∫ρψ."""
        return 0.5 * float(np.dot(self.mesh.quad_weights, self.rho * self.psi_q))

    @property
    def dirichlet_energy(self) -> float:
        """½∫|∇ψ|²."""
        return 0.5 * operators_for(self.mesh).dirichlet(self.psi.values)

    def mean(self, fq) -> float:
        """Weighted mean <f>_λ with weight ρ^{1/q}."""
        wq = self.mesh.quad_weights * self.weight
        return float(np.dot(wq, fq) / wq.sum())


def make_state(mesh, config, lam, alpha, psi, **kw) -> PlasmaState:
    if not isinstance(psi, Field):
        psi = Field(mesh, psi)
    return PlasmaState(float(lam), float(alpha), psi, config, **kw)


def trivial_state(mesh: Mesh, config: PlasmaConfig) -> PlasmaState:
    """The λ = 0 solution (1, G[1])."""
    ops = operators_for(mesh)
    return make_state(mesh, config, 0.0, 1.0, ops.green_q(ops.ones_q))


def _check_positive(state_or_base, alpha, config, strict=True):
    base = state_or_base
    floor = config.floor(alpha)
    bmin = float(base.min())
    if bmin < floor - 1e-14 or (strict and bmin < 0):
        raise DomainOfDefinitionError(
            f"min(α+λψ) = {bmin:.3e} below admissible floor {floor:.3e}")


def _residual_arrays(ops, p, lam, alpha, psi_vals):
    base = alpha + lam * (ops.Q @ psi_vals)
    rho = np.power(np.maximum(base, 0.0), p)
    F = ops.A @ psi_vals - ops.load(rho)
    g = ops.integrate_q(rho) - 1.0
    return F, g, base


def residual_norm(ops, F, g) -> float:
    """max(‖A⁻¹F‖_∞, |g|): the PDE residual measured as a correction to ψ."""
    return max(float(np.linalg.norm(ops.solve(F), np.inf)), abs(float(g)))


def residual(state: PlasmaState):
    """Return ``(F, g)``: the discrete -Δψ - ρ as a Field-shaped load vector and ∫ρ - 1."""
    _check_positive(state.base, state.alpha, state.config)
    ops = operators_for(state.mesh)
    F, g, _ = _residual_arrays(ops, state.config.p, state.lam, state.alpha, state.psi.values)
    return Field(state.mesh, F), g


def jacobian_apply(state: PlasmaState, d_alpha: float, d_psi: Field):
    """Directional derivative of :func:`residual` in direction (dα, dψ)."""
    _check_positive(state.base, state.alpha, state.config)
    ops = operators_for(state.mesh)
    p, lam = state.config.p, state.lam
    W = state.weight
    dq = ops.Q @ d_psi.values
    lin = p * W * (d_alpha + lam * dq)
    dF = ops.A @ d_psi.values - ops.load(lin)
    dg = ops.integrate_q(lin)
    return Field(state.mesh, dF), dg


def bordered_matrix(ops, p, lam, alpha, psi_vals):
    """Sparse (n+1)x(n+1) Jacobian of (F, g) with respect to (ψ, α)."""
    base = alpha + lam * (ops.Q @ psi_vals)
    W = np.power(np.maximum(base, 0.0), p - 1.0)
    MW = ops.mass_matrix(W)
    bW = ops.load(W)
    m = ops.integrate_q(W)
    K = ops.A - lam * p * MW
    J = sp.bmat([[K, sp.csc_matrix(-p * bW[:, None])],
                 [sp.csr_matrix(lam * p * bW[None, :]), sp.csr_matrix([[p * m]])]], format="csc")
    return J


def lambda_derivative(ops, p, lam, alpha, psi_vals):
    """∂(F, g)/∂λ at fixed (ψ, α)."""
    psi_q = ops.Q @ psi_vals
    base = alpha + lam * psi_q
    W = np.power(np.maximum(base, 0.0), p - 1.0)
    d = p * W * psi_q
    return -ops.load(d), ops.integrate_q(d)


def _factor(J):
    try:
        lu = spla.splu(J)
    except RuntimeError as exc:
        raise NearFold(f"bordered Jacobian is singular: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-13 * diag.max():
        raise NearFold("bordered Jacobian is numerically singular")
    return lu


def newton_solve(mesh: Mesh, config: PlasmaConfig, lam: float, guess=None) -> PlasmaState:
    """Solve the constrained problem at fixed ``lam`` from ``guess = (α, ψ)``.

    Damped Newton: the step is halved until the residual norm decreases and
    α + λψ stays above the positivity floor.

    Raises
    ------
    NoConvergence
        ``max_iters`` exhausted.
    DomainOfDefinitionError
        The initial guess, or every damped step, leaves the admissible set.
    NearFold
        The bordered Jacobian is singular; continue in arclength instead.
    """
    ops = operators_for(mesh)
    p = config.p
    if guess is None:
        alpha, psi = 1.0, ops.green_q(ops.ones_q)
    else:
        alpha, psi = guess
        psi = np.array(psi.values if isinstance(psi, Field) else psi, dtype=float)
    alpha = float(alpha)
    F, g, base = _residual_arrays(ops, p, lam, alpha, psi)
    _check_positive(base, alpha, config)

    def norm(F, g):
        return residual_norm(ops, F, g)

    r = norm(F, g)
    history = [r]
    for it in range(config.max_iters + 1):
        if r <= config.newton_tol:
            if len(history) >= 3:
                log.debug("newton λ=%.6g converged in %d its; last ratios %s", lam, it,
                          [f"{history[k + 1] / max(history[k], 1e-300) ** 2:.2e}"
                           for k in range(max(0, len(history) - 3), len(history) - 1)])
            return make_state(mesh, config, lam, alpha, psi, iterations=it, residual_norm=r)
        if it == config.max_iters:
            break
        J = bordered_matrix(ops, p, lam, alpha, psi)
        lu = _factor(J)
        step = lu.solve(-np.concatenate([F, [g]]))
        t = 1.0
        while True:
            new_psi = psi + t * step[:-1]
            new_alpha = alpha + t * step[-1]
            Fn, gn, bn = _residual_arrays(ops, p, lam, new_alpha, new_psi)
            ok = bn.min() >= config.floor(new_alpha) - 1e-14 and new_alpha > -1e-14 or lam == 0
            rn = norm(Fn, gn)
            if ok and rn < r * (1 - 1e-4 * t) or (ok and rn <= config.newton_tol):
                break
            t *= 0.5
            if t < 1e-6:
                if not ok:
                    raise DomainOfDefinitionError(
                        f"damped Newton cannot stay admissible at λ={lam:.6g}")
                raise NoConvergence(f"line search failed at λ={lam:.6g}, residual {r:.3e}")
        psi, alpha, F, g, r = new_psi, new_alpha, Fn, gn, rn
        history.append(r)
        log.info("newton λ=%.6g it=%d residual=%.3e step=%.3e damping=%g",
                 lam, it + 1, r, float(np.linalg.norm(step, np.inf)), t)
    raise NoConvergence(f"no convergence in {config.max_iters} iterations at λ={lam:.6g} "
                        f"(residual {r:.3e})")
