"""Direct minimization of the free energy over unit-mass densities.

    J_λ(ρ) = (p/(p+1)) ∫ ρ^{1+1/p} - (λ/2) ∫ ρ G[ρ],     ρ ≥ 0, ∫ρ = 1.

Densities live at quadrature points, so the Euler-Lagrange system of the
discrete minimization is the same discrete problem that
:func:`plasmacont.newton.newton_solve` solves.  This solver shares no code
path with Newton beyond the Green solve and quadrature.

The main iteration is the convex-concave procedure: linearize the concave
interaction term at ρ_k and minimize the rest exactly, which gives

    ψ_k = G[ρ_k],   α_k: ∫(α_k + λψ_k)_+^p = 1,   ρ_{k+1} = (α_k + λψ_k)_+^p

and never increases J.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .geometry import Mesh
from .newton import PlasmaConfig, PlasmaState, SolverError, make_state
from .operators import Field, operators_for

__all__ = [
    "MinimizerError",
    "BracketError",
    "DensityIterate",
    "DualCheck",
    "free_energy",
    "minimize_free_energy",
    "lambda_star_star",
    "identity_suite",
    "psi_I_check",
]

log = logging.getLogger(__name__)


class MinimizerError(SolverError):
    def __init__(self, msg, iterate=None):
        super().__init__(msg)
        self.iterate = iterate


class BracketError(SolverError):
    pass


@dataclass
class DensityIterate:
    lam: float
    rho: np.ndarray        # at quadrature points
    J_value: float
    alpha: float
    psi: Field
    config: PlasmaConfig
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)
    optimality_residual: float = float("nan")
    cone_boundary: bool = False      # α + λψ < 0 somewhere, density vanishes there

    @property
    def mesh(self):
        return self.psi.mesh

    @property
    def energy(self) -> float:
        return 0.5 * float(self.mesh.quad_weights @ (self.rho * self.psi.at_quad()))

    @property
    def mass(self) -> float:
        return float(self.mesh.quad_weights @ self.rho)

    def as_state(self) -> PlasmaState:
        """Positive variational solutions are solutions of the constrained problem."""
        if self.cone_boundary:
            raise SolverError("iterate has a vanishing-density set; not a positive solution")
        return make_state(self.mesh, self.config, self.lam, self.alpha, self.psi.values.copy(),
                          converged=self.converged, iterations=self.iterations)


@dataclass
class DualCheck:
    Psi_I_value: float
    I: float
    v: object                   # dual.BoundaryField
    mass_residual: float        # |∫v_+^p - I| / I
    competitor_gaps: list       # Ψ_I(competitor) - Ψ_I(v)
    local_min: bool


def free_energy(mesh: Mesh, p: float, lam: float, rho) -> float:
    """Discrete J_λ(ρ) for a density given at quadrature points."""
    return _free_energy(operators_for(mesh), p, lam, np.asarray(rho, dtype=float))


def _free_energy(ops, p, lam, rho):
    b = ops.load(rho)
    return p / (p + 1.0) * float(ops.w @ rho ** (1.0 + 1.0 / p)) - 0.5 * lam * float(b @ ops.solve(b))


def _solve_alpha(w, p, lam, psi_q):
    """Root of ∫(α + λψ)_+^p = 1; the map is increasing in α."""
    def mass(a):
        return float(w @ np.maximum(a + lam * psi_q, 0.0) ** p) - 1.0

    hi = 1.0 + lam * max(0.0, -float(psi_q.min()))
    lo = -lam * float(psi_q.max())
    if mass(hi) < 0:      # only with a non-positive ψ
        while mass(hi) < 0:
            hi = 2 * hi + 1
    return brentq(mass, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def minimize_free_energy(mesh: Mesh, config: PlasmaConfig, lam: float, tol: float = 1e-11,
                         max_iter: int = 20000, initial: DensityIterate | np.ndarray | None = None
                         ) -> DensityIterate:
    """Minimize J_λ over unit-mass densities.

    Parameters
    ----------
    tol : float
        Stop when the sup-norm change of ψ between sweeps drops below
        ``tol`` (relative to sup ψ) and α moves by less than ``tol``.
    initial : DensityIterate or array, optional
        Warm start; the uniform density otherwise.

    Raises
    ------
    MinimizerError
        ``max_iter`` sweeps without convergence; carries the last iterate.
    """
    if lam < 0:
        raise ValueError("λ must be non-negative")
    ops = operators_for(mesh)
    p = config.p
    w = ops.w
    if initial is None:
        rho = np.full(len(w), 1.0 / float(w.sum()))
    elif isinstance(initial, DensityIterate):
        rho = initial.rho.copy()
    else:
        rho = np.asarray(initial, dtype=float).copy()
    rho /= float(w @ rho)

    psi = ops.solve(ops.load(rho))
    J = _free_energy(ops, p, lam, rho)
    history = [J]
    alpha = math.nan
    converged = False
    for it in range(1, max_iter + 1):
        psi_q = ops.Q @ psi
        a_new = _solve_alpha(w, p, lam, psi_q)
        cand = np.maximum(a_new + lam * psi_q, 0.0) ** p
        J_new = _free_energy(ops, p, lam, cand)
        theta = 1.0
        # the concave-convex step cannot raise J in exact arithmetic; guard roundoff
        while J_new > J + 1e-14 * max(1.0, abs(J)) and theta > 1e-6:
            theta *= 0.5
            trial = (1 - theta) * rho + theta * cand
            J_new = _free_energy(ops, p, lam, trial)
            if J_new <= J:
                cand = trial
                break
        if J_new > J + 1e-14 * max(1.0, abs(J)):
            cand, J_new = _projected_gradient_step(ops, p, lam, rho, J)
        rho_old_psi = psi
        rho = cand
        psi = ops.solve(ops.load(rho))
        J = J_new
        history.append(J)
        dpsi = float(np.max(np.abs(psi - rho_old_psi))) / max(float(np.max(np.abs(psi))), 1e-300)
        dalpha = abs(a_new - alpha) if not math.isnan(alpha) else math.inf
        alpha = a_new
        if dpsi < tol and dalpha < tol:
            converged = True
            break
    psi_q = ops.Q @ psi
    alpha = _solve_alpha(w, p, lam, psi_q)
    opt = float(np.max(np.abs(rho ** (1.0 / p) - np.maximum(alpha + lam * psi_q, 0.0))))
    out = DensityIterate(float(lam), rho, J, float(alpha), Field(mesh, psi), config, converged, it,
                         history, opt, bool(np.min(alpha + lam * psi_q) < 0))
    if not converged:
        raise MinimizerError(f"free-energy minimization did not converge at λ={lam:.6g}", out)
    log.debug("variational λ=%.6g: α=%.12g in %d sweeps", lam, alpha, it)
    return out


def _project_simplex(w, y):
    """Weighted L2 projection onto {ρ ≥ 0, w·ρ = 1}: ρ = (y - τ)_+."""
    def f(tau):
        return float(w @ np.maximum(y - tau, 0.0)) - 1.0

    lo = float(y.min()) - 1.0 / float(w.sum()) - 1.0
    hi = float(y.max())
    return np.maximum(y - brentq(f, lo, hi, xtol=1e-16), 0.0)


def _projected_gradient_step(ops, p, lam, rho, J):
    """Fallback descent step with Armijo backtracking."""
    grad = rho ** (1.0 / p) - lam * (ops.Q @ ops.solve(ops.load(rho)))
    step = 1.0
    mesh_w = ops.w
    for _ in range(60):
        cand = _project_simplex(mesh_w, rho - step * grad)
        Jc = _free_energy(ops, p, lam, cand)
        if Jc <= J - 1e-4 * float(mesh_w @ (grad * (rho - cand))):
            return cand, Jc
        step *= 0.5
    return rho, J


def lambda_star_star(mesh: Mesh, config: PlasmaConfig, lambda_cap: float | None = None,
                     rtol: float = 1e-7, lam_lo: float | None = None) -> float:
    """λ at which the multiplier of the minimizer changes sign.

    The bracket starts at ``lam_lo`` (default: the uniqueness threshold
    Λ(Ω,2p)/p, where α > 0 is known) and grows geometrically until α < 0 or
    ``lambda_cap`` is passed.  The root is then refined by Brent's method
    with minimizers warm-started from the nearest bracket end; its bracket
    width is at most ``rtol * λ**``.
    """
    from .spectrum import sobolev_constant

    p = config.p
    if lam_lo is None:
        lam_lo = sobolev_constant(mesh, 2 * p).Lambda / p
    if lambda_cap is None:
        lambda_cap = 10.0 * lam_lo
    cache = {}

    def alpha_at(lam):
        if lam not in cache:
            near = min(cache, key=lambda l: abs(l - lam)) if cache else None
            it = minimize_free_energy(mesh, config, lam, initial=cache[near] if near else None)
            cache[lam] = it
        return cache[lam].alpha

    lo = lam_lo
    if alpha_at(lo) <= 0:
        raise BracketError(f"α ≤ 0 already at the lower bracket λ={lo:.6g}")
    hi = lo * 1.25
    while alpha_at(hi) > 0:
        lo, hi = hi, hi * 1.25
        if lo > lambda_cap:
            raise BracketError(f"no sign change of α on [0, {lambda_cap:.6g}]")
    return float(brentq(alpha_at, lo, hi, xtol=1e-14, rtol=rtol))


def identity_suite(items, N: int | None = None) -> dict:
    """Check J = C + c_p α + ((p-1)/(p+1)) λE along solved inputs.

    ``items`` is a DensityIterate, a PlasmaState, or a list of them.  The
    free-energy value of a PlasmaState is recomputed from its density.  The
    additive constant C is fitted (mean residual) and reported along with the
    maximum deviation after the fit.  For N ≥ 3 the energy bound
    E ≤ (q/λ)(1 - α) is evaluated at every λ > 0.
    """
    if not isinstance(items, (list, tuple)):
        items = [items]
    rows = []
    for it in items:
        mesh = it.mesh if isinstance(it, DensityIterate) else it.mesh
        p = it.config.p
        if isinstance(it, DensityIterate):
            J, rho, E = it.J_value, it.rho, it.energy
        else:
            rho = it.rho
            J = free_energy(mesh, p, it.lam, rho)
            E = it.energy
        cp = p / (p + 1.0)
        rhs = cp * it.alpha + (p - 1.0) / (p + 1.0) * it.lam * E
        rows.append((it.lam, it.alpha, E, J, J - rhs, p))
    diffs = np.array([r[4] for r in rows])
    C = float(diffs.mean())
    res = float(np.max(np.abs(diffs - C)))
    dim = N if N is not None else items[0].mesh.dim
    bound = []
    if dim >= 3:
        for lam, alpha, E, J, _, p in rows:
            if lam > 0:
                q = p / (p - 1.0)
                b = q / lam * (1 - alpha)
                bound.append({"lambda": lam, "energy": E, "bound": b, "margin": b - E, "holds": E <= b})
    conv = "no additive constant" if abs(C) < 1e-8 else (
        "additive constant -1" if abs(C + 1) < 1e-8 else f"additive constant {C:.3e}")
    return {
        "fitted_constant": C,
        "identity_residual": res,
        "convention": conv,
        "rows": [{"lambda": r[0], "alpha": r[1], "energy": r[2], "J": r[3]} for r in rows],
        "energy_bound": bound,
        "energy_bound_holds": all(b["holds"] for b in bound) if bound else None,
    }


def psi_I_check(state: PlasmaState, n_competitors: int = 10, eps: float = 1e-3,
                seed: int = 0) -> DualCheck:
    """Evaluate Ψ_I at the dual image of ``state`` and probe local minimality.

    Competitors are v + ε w shifted by the constant that restores
    ∫(·)_+^p = I, with w a random smooth Dirichlet field (Green solve of
    white noise) scaled to the sup norm of v - γ.
    """
    from .dual import to_dual

    sol = to_dual(state)
    mesh = state.mesh
    ops = operators_for(mesh)
    p, I = state.config.p, sol.I
    v = sol.v

    def Psi(interior, gamma):
        vq = gamma + ops.Q @ interior
        return (0.5 * ops.dirichlet(interior)
                - float(ops.w @ np.maximum(vq, 0.0) ** (p + 1.0)) / (p + 1.0) + I * gamma)

    def mass(interior, gamma):
        return float(ops.w @ np.maximum(gamma + ops.Q @ interior, 0.0) ** p)

    base = Psi(v.interior.values, v.gamma)
    rng = np.random.default_rng(seed)
    scale = float(np.max(np.abs(v.interior.values)))
    gaps = []
    for _ in range(n_competitors):
        wv = ops.solve(ops.M @ rng.standard_normal(ops.n))
        wv *= eps * scale / float(np.max(np.abs(wv)))
        newi = v.interior.values + wv
        g0 = v.gamma
        c = brentq(lambda c: mass(newi, g0 + c) - I, -abs(g0) - scale - 1.0, abs(g0) + scale + 1.0,
                   xtol=1e-15)
        gaps.append(Psi(newi, g0 + c) - base)
    mres = abs(mass(v.interior.values, v.gamma) - I) / I
    return DualCheck(base, I, v, mres, gaps, bool(min(gaps) >= -1e-12 * abs(base)))
