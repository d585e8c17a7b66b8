"""Branch tracing from (λ, α, ψ) = (0, 1, G[1]) to the endpoint α -> 0⁺.

Stepping is hybrid: a natural step in λ while the branch is a steep graph
over λ, pseudo-arclength otherwise.  The tail of the branch is followed with
α as the parameter so that the final points sit exactly at ``2*alpha_stop``
and ``alpha_stop``; (λ, E) are then linearly extrapolated to α = 0.

The arclength metric is ``dλ² + dα² + ∫dψ²``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh
from .newton import (
    DomainOfDefinitionError,
    NearFold,
    NoConvergence,
    PlasmaConfig,
    PlasmaState,
    SolverError,
    _residual_arrays,
    bordered_matrix,
    lambda_derivative,
    make_state,
    residual_norm,
    trivial_state,
)
from .operators import Field, operators_for
from .spectrum import EigenSolverError, eigenpairs, sobolev_constant

__all__ = [
    "ContinuationConfig",
    "BranchPoint",
    "FoldReport",
    "StalledBranch",
    "trace_branch",
    "fold_handler",
    "lambda_one_estimate",
    "endpoint_extrapolation",
    "solve_at_alpha",
]

log = logging.getLogger(__name__)


class StalledBranch(SolverError):
    """Step size fell below ``ds_min``; ``points`` holds the partial branch."""

    def __init__(self, msg, points):
        super().__init__(msg)
        self.points = points


@dataclass(frozen=True)
class ContinuationConfig:
    ds_init: float = 0.5
    ds_min: float = 1e-6
    ds_max: float = 2.0
    alpha_stop: float = 1e-3
    lambda_cap: float | None = None     # None -> 10 Λ(Ω,2p)/p
    fold_switch_threshold: float = 0.3
    eig_every: int = 1
    n_eigs: int = 2
    max_steps: int = 5000
    alpha_tail: float = 0.05            # below this α becomes the parameter
    max_turn: float = 0.25              # radians between consecutive tangents
    max_correction: float = 0.5         # corrector distance relative to ds
    indicator_threshold: float = 1e-6
    gap_threshold: float = 1e-3

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds_init <= self.ds_max:
            raise ValueError("need 0 < ds_min <= ds_init <= ds_max")
        if not self.alpha_stop > 0:
            raise ValueError("alpha_stop must be positive")
        if self.eig_every < 1:
            raise ValueError("eig_every must be >= 1")


@dataclass
class BranchPoint:
    s: float
    state: PlasmaState
    sigma1: float
    tangent: tuple            # (dλ, dα, dψ values)
    is_fold: bool = False
    step_accepted: bool = True
    mode: str = "natural"
    sigma2: float = float("nan")
    fold: "FoldReport | None" = None
    ds: float = float("nan")          # step length requested for this point

    @property
    def lam(self):
        return self.state.lam

    @property
    def alpha(self):
        return self.state.alpha

    @property
    def energy(self):
        return self.state.energy

    @property
    def mass_residual(self):
        return self.state.mass - 1.0


@dataclass
class FoldReport:
    lam: float
    alpha: float
    sigma1: float
    sigma2: float
    mean_phi: float                  # <φ>_λ
    proj_psi: float                  # <[φ]_λ, ψ>_λ
    proj_norm: float                 # <[φ]²>_λ
    indicator: float                 # <φ> / (m ‖φ‖_λ)
    kernel_gap: float
    verdict: str                     # transversal_fold | degenerate_indicator | degenerate_kernel
    predicted_ratio: float = float("nan")   # p<[φ],ψ>/<[φ]²>, sign of σ_1/λ'
    sign_pattern_ok: bool | None = None
    same_sign: bool | None = None
    phi: Field | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# linear algebra on x = (ψ, α, λ)

class _System:
    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        self.ops = operators_for(mesh)
        self.n = self.ops.n

    def inner(self, a, b):
        n = self.n
        return float(a[n] * b[n] + a[n + 1] * b[n + 1] + a[:n] @ (self.ops.M @ b[:n]))

    def norm(self, a):
        return math.sqrt(self.inner(a, a))

    def pack(self, state):
        return np.concatenate([state.psi.values, [state.alpha, state.lam]])

    def state(self, x, **kw):
        n = self.n
        return make_state(self.mesh, self.config, x[n + 1], x[n], x[:n].copy(), **kw)

    def residual(self, x):
        n = self.n
        F, g, base = _residual_arrays(self.ops, self.config.p, x[n + 1], x[n], x[:n])
        return F, g, base

    def jac(self, x):
        """[J_(ψ,α) | J_λ] as a sparse (n+1) x (n+2) matrix."""
        n, p = self.n, self.config.p
        J = bordered_matrix(self.ops, p, x[n + 1], x[n], x[:n])
        Fl, gl = lambda_derivative(self.ops, p, x[n + 1], x[n], x[:n])
        return sp.hstack([J, sp.csc_matrix(np.concatenate([Fl, [gl]])[:, None])], format="csc")

    def metric_row(self, t):
        n = self.n
        row = np.empty(n + 2)
        row[:n] = self.ops.M @ t[:n]
        row[n:] = t[n:]
        return row

    def tangent(self, x, prev=None):
        """Unit tangent; orientation follows ``prev`` or dλ > 0 at the start."""
        Jx = self.jac(x)
        n = self.n
        if prev is None:
            e = np.zeros(n + 2)
            e[n + 1] = 1.0
            row = e
        else:
            row = self.metric_row(prev)
        Aug = sp.vstack([Jx, sp.csr_matrix(row[None, :])], format="csc")
        rhs = np.zeros(n + 2)
        rhs[-1] = 1.0
        t = spla.splu(Aug).solve(rhs)
        t /= self.norm(t)
        if prev is None:
            t *= math.copysign(1.0, t[n + 1])
        elif self.inner(t, prev) < 0:
            t = -t
        return t

    def rnorm(self, F, g):
        return residual_norm(self.ops, F, g)

    def correct(self, x_pred, fixed, anchor=None, tangent=None, ds=None, max_iters=None):
        """Newton corrector.

        ``fixed`` is "lam" (natural), "alpha" (tail) or "arc" (pseudo-arclength
        constraint <t, x - anchor> = ds).
        """
        cfg = self.config
        n = self.n
        x = x_pred.copy()
        max_iters = cfg.max_iters if max_iters is None else max_iters
        F, g, base = self.residual(x)

        def extra(x):
            if fixed == "arc":
                return self.inner(tangent, x - anchor) - ds
            return 0.0

        def admissible(x, base):
            return x[n] > 0 and base.min() > 0

        if not admissible(x, base):
            raise DomainOfDefinitionError("predictor left the admissible set")
        r = max(self.rnorm(F, g), abs(extra(x)))
        for it in range(max_iters + 1):
            if r <= cfg.newton_tol:
                if base.min() < cfg.floor(x[n]) - 1e-14:
                    raise DomainOfDefinitionError("corrected state below the positivity floor")
                return x, it
            if it == max_iters:
                break
            Jx = self.jac(x)
            if fixed == "lam":
                M = Jx[:, :n + 1]
            elif fixed == "alpha":
                M = Jx[:, list(range(n)) + [n + 1]]
            else:
                M = sp.vstack([Jx, sp.csr_matrix(self.metric_row(tangent)[None, :])], format="csc")
            rhs = -np.concatenate([F, [g]] + ([[extra(x)]] if fixed == "arc" else []))
            try:
                d = spla.splu(M.tocsc()).solve(rhs)
            except RuntimeError as exc:
                raise NearFold(str(exc)) from exc
            dx = np.zeros(n + 2)
            if fixed == "lam":
                dx[:n + 1] = d
            elif fixed == "alpha":
                dx[:n] = d[:n]
                dx[n + 1] = d[n]
            else:
                dx = d
            tstep = 1.0
            while True:
                xn = x + tstep * dx
                Fn, gn, bn = self.residual(xn)
                rn = max(self.rnorm(Fn, gn), abs(extra(xn)))
                if admissible(xn, bn) and (rn < r or rn <= cfg.newton_tol):
                    break
                tstep *= 0.5
                if tstep < 1e-4:
                    raise NoConvergence("corrector line search failed")
            x, F, g, r, base = xn, Fn, gn, rn, bn
        raise NoConvergence(f"corrector did not converge (residual {r:.3e})")


def _sigmas(state, k):
    try:
        res = eigenpairs(state, k)
    except EigenSolverError as exc:
        log.warning("eigen solve failed at λ=%.6g: %s", state.lam, exc)
        return float("nan"), float("nan"), None
    s2 = res.sigmas[1] if len(res.sigmas) > 1 else float("nan")
    return float(res.sigmas[0]), float(s2), res


# --------------------------------------------------------------------------

def solve_at_alpha(mesh: Mesh, config: PlasmaConfig, alpha: float, guess: PlasmaState) -> PlasmaState:
    """Solve for (λ, ψ) at prescribed α, starting from ``guess``."""
    sysm = _System(mesh, config)
    x = sysm.pack(guess)
    x[sysm.n] = alpha
    x, it = sysm.correct(x, "alpha")
    F, g, _ = sysm.residual(x)
    return sysm.state(x, iterations=it, residual_norm=sysm.rnorm(F, g))


def _default_cap(mesh, config):
    return 10.0 * sobolev_constant(mesh, 2 * config.p).Lambda / config.p


def trace_branch(mesh: Mesh, plasma_config: PlasmaConfig | None = None,
                 cont_config: ContinuationConfig | None = None) -> list[BranchPoint]:
    """Trace the positive branch until α <= alpha_stop or λ > lambda_cap.

    Returns the list of accepted points; the last two lie at α = 2*alpha_stop
    and α = alpha_stop when the endpoint is reached.  Raises
    :class:`StalledBranch` (carrying the partial branch) if the step size
    underflows ``ds_min``.
    """
    pc = plasma_config or PlasmaConfig()
    cc = cont_config or ContinuationConfig()
    sysm = _System(mesh, pc)
    n = sysm.n
    cap = cc.lambda_cap if cc.lambda_cap is not None else _default_cap(mesh, pc)

    st = trivial_state(mesh, pc)
    x = sysm.pack(st)
    t = sysm.tangent(x)
    s1, s2, _ = _sigmas(st, cc.n_eigs)
    points = [BranchPoint(0.0, st, s1, _split(t, n), mode="start", sigma2=s2)]
    s = 0.0
    ds = cc.ds_init
    step = 0
    while step < cc.max_steps:
        last = points[-1]
        if last.alpha <= cc.alpha_tail:
            points += _tail(sysm, cc, points)
            break
        mode = "natural" if abs(t[n + 1]) >= cc.fold_switch_threshold and not (last.sigma1 < 0) \
            else "arclength"
        if t[n] < 0 and x[n] + ds * t[n] < 0.5 * cc.alpha_tail:
            # land the predictor near the tail threshold instead of overshooting α = 0
            ds = max(cc.ds_min, (x[n] - 0.5 * cc.alpha_tail) / -t[n])
        try:
            xn, its, mode = _corrector_step(sysm, x, t, ds, mode)
            tn = sysm.tangent(xn, t)
        except (NoConvergence, DomainOfDefinitionError, NearFold) as exc:
            ds = _shrink(ds, cc, points, x, f"step rejected ({exc})")
            continue
        # reject steps that turn the tangent or need a long correction
        turn = math.acos(max(-1.0, min(1.0, sysm.inner(t, tn))))
        if turn > cc.max_turn or sysm.norm(xn - x - ds * t) > cc.max_correction * ds:
            ds = _shrink(ds, cc, points, x, f"turn {turn:.3f} rad too large")
            continue
        F, g, _ = sysm.residual(xn)
        stn = sysm.state(xn, iterations=its, residual_norm=sysm.rnorm(F, g))
        if (step + 1) % cc.eig_every == 0:
            s1, s2, _ = _sigmas(stn, cc.n_eigs)
        else:
            s1, s2 = float("nan"), float("nan")
        crossed_sigma = (not math.isnan(s1) and not math.isnan(last.sigma1)
                         and np.sign(s1) != np.sign(last.sigma1))
        crossed_lam = np.sign(tn[n + 1]) != np.sign(t[n + 1])
        if crossed_sigma and not crossed_lam and ds > 16 * cc.ds_min:
            # on a smooth branch σ_1 and dλ/ds change sign together; refine
            ds = _shrink(ds, cc, points, x, "σ_1 changed sign without a turning point")
            continue
        step += 1
        h = sysm.inner(t, xn - x)
        dist = sysm.norm(xn - x)
        pt = BranchPoint(s + dist, stn, s1, _split(tn, n), mode=mode, sigma2=s2, ds=ds)
        if crossed_sigma or crossed_lam:
            try:
                fold_pt = _locate_fold(sysm, cc, x, t, h, s, use_sigma=not crossed_lam)
                points.append(fold_pt)
                log.info("singular point at λ=%.8g: %s", fold_pt.lam, fold_pt.fold.verdict)
            except SolverError as exc:
                log.warning("fold location failed: %s", exc)
        points.append(pt)
        s += dist
        x, t = xn, tn
        if x[n + 1] > cap:
            log.warning("λ exceeded lambda_cap = %.4g; stopping", cap)
            break
        # step-size control from corrector effort
        if its <= 3 and turn < 0.5 * cc.max_turn:
            ds = min(cc.ds_max, 1.5 * ds)
        elif its >= 6:
            ds = max(cc.ds_min, 0.5 * ds)
    for b in points:
        if b.is_fold:
            _check_sign_pattern(b, points)
    return points


def _shrink(ds, cc, points, x, why):
    ds *= 0.5
    log.info("%s; ds -> %.3g", why, ds)
    if ds < cc.ds_min:
        raise StalledBranch(f"step size underflow at λ={x[-1]:.6g}", points)
    return ds


def _corrector_step(sysm, x, t, ds, mode):
    xp = x + ds * t
    if mode == "natural":
        try:
            xn, its = sysm.correct(xp, "lam")
            return xn, its, mode
        except NearFold:
            mode = "arclength"
    xn, its = sysm.correct(xp, "arc", anchor=x, tangent=t, ds=ds)
    return xn, its, "arclength"


def _split(t, n):
    return (float(t[n + 1]), float(t[n]), t[:n].copy())


def _tail(sysm, cc, points):
    """Follow the branch with α as parameter down to alpha_stop."""
    n = sysm.n
    out = []
    last = points[-1]
    a_targets = []
    a = last.alpha
    while a * 0.5 > 2 * cc.alpha_stop:
        a *= 0.5
        a_targets.append(a)
    a_targets += [2 * cc.alpha_stop, cc.alpha_stop]
    prev = last
    prev_x = sysm.pack(prev.state)
    t = np.concatenate([prev.tangent[2], [prev.tangent[1], prev.tangent[0]]])
    s = prev.s
    for a in a_targets:
        if a >= prev.alpha:
            continue
        # predictor along the tangent to the target α
        da = a - prev_x[n]
        xp = prev_x + (da / t[n]) * t if abs(t[n]) > 1e-12 else prev_x.copy()
        xp[n] = a
        xn, its = sysm.correct(xp, "alpha")
        tn = sysm.tangent(xn, t)
        F, g, _ = sysm.residual(xn)
        st = sysm.state(xn, iterations=its, residual_norm=sysm.rnorm(F, g))
        s1, s2, _ = _sigmas(st, cc.n_eigs)
        s += sysm.norm(xn - prev_x)
        pt = BranchPoint(s, st, s1, _split(tn, n), mode="alpha", sigma2=s2)
        out.append(pt)
        prev, prev_x, t = pt, xn, tn
    return out


def _locate_fold(sysm, cc, xa, ta, h_hi, s0, use_sigma=False):
    """Illinois regula falsi along the arclength chord from ``xa``.

    The sign function is dλ/ds, or σ_1 when only the eigenvalue changed sign.
    """
    n = sysm.n

    def solve(h):
        xh, _ = sysm.correct(xa + h * ta, "arc", anchor=xa, tangent=ta, ds=h)
        th = sysm.tangent(xh, ta)
        if use_sigma:
            F, g, _ = sysm.residual(xh)
            f = _sigmas(sysm.state(xh), 1)[0]
        else:
            f = th[n + 1]
        return xh, th, f

    lo, hi = 0.0, h_hi
    flo = ta[n + 1] if not use_sigma else _sigmas(sysm.state(xa), 1)[0]
    xm, tm, fhi = solve(hi)
    side = 0
    for _ in range(80):
        if fhi == flo or hi - lo < 1e-13 * max(1.0, h_hi):
            break
        h = (lo * fhi - hi * flo) / (fhi - flo)
        xm, tm, fm = solve(h)
        if abs(fm) < 1e-12:
            break
        if np.sign(fm) == np.sign(flo):
            lo, flo = h, fm
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi, fhi = h, fm
            if side == 1:
                flo *= 0.5
            side = 1
    F, g, _ = sysm.residual(xm)
    st = sysm.state(xm, residual_norm=sysm.rnorm(F, g))
    report = fold_handler(st, cc)
    return BranchPoint(s0 + sysm.norm(xm - xa), st, report.sigma1, _split(tm, n),
                       is_fold=True, mode="fold", sigma2=report.sigma2, fold=report)


def fold_handler(state: PlasmaState, cc: ContinuationConfig | None = None) -> FoldReport:
    """Analyse a point with σ_1 ≈ 0: kernel field, transversality indicator, verdict.

    The kernel field is the eigenfield whose σ is closest to 0.  Verdicts:

    * ``degenerate_kernel``: the second-closest σ is within
      ``gap_threshold * |σ_2|`` of the first (numerically 2-D kernel);
    * ``degenerate_indicator``: |<φ>| / (m ‖φ‖) below ``indicator_threshold``;
    * ``transversal_fold`` otherwise, in which case pseudo-arclength crosses it.
    """
    cc = cc or ContinuationConfig()
    res = eigenpairs(state, 3)
    j = int(np.argmin(np.abs(res.sigmas)))
    others = [k for k in range(len(res.sigmas)) if k != j]
    nearest = min(others, key=lambda k: abs(res.sigmas[k]))
    phi = res.phis[j]
    pq = phi.at_quad()
    mean = res.means[j]
    proj = pq - mean
    proj_psi = state.mean(proj * state.psi_q)
    pn = res.projected_norms[j]
    indicator = float(res.indicators[j])
    gap = float(abs(res.sigmas[nearest] - res.sigmas[j]))
    if gap < cc.gap_threshold * abs(res.sigmas[nearest]):
        verdict = "degenerate_kernel"
    elif abs(indicator) < cc.indicator_threshold:
        verdict = "degenerate_indicator"
    else:
        verdict = "transversal_fold"
    return FoldReport(state.lam, state.alpha, float(res.sigmas[j]), float(res.sigmas[nearest]),
                      float(mean), float(proj_psi), float(pn), indicator, gap, verdict,
                      predicted_ratio=state.config.p * proj_psi / pn,
                      same_sign=bool(np.sign(mean) == np.sign(proj_psi)), phi=phi)


def _check_sign_pattern(fold_pt, points):
    """Compare sign(σ_1 / λ') on both sides of the fold with p<[φ],ψ>/<[φ]²>."""
    i = points.index(fold_pt)
    want = np.sign(fold_pt.fold.predicted_ratio)
    ok = True
    for j in (i - 1, i + 1):
        if 0 <= j < len(points):
            q = points[j]
            if not math.isnan(q.sigma1) and q.tangent[0] != 0:
                ok &= np.sign(q.sigma1 / q.tangent[0]) == want
    fold_pt.fold.sign_pattern_ok = bool(ok)


def lambda_one_estimate(branch: list[BranchPoint]) -> float:
    """Largest λ reached while α > 0 and σ_1 > 0 at every earlier point."""
    best = 0.0
    for pt in branch:
        if not pt.alpha > 0 or not pt.sigma1 > 0:
            break
        best = max(best, pt.lam)
    return best


def endpoint_extrapolation(branch: list[BranchPoint]) -> dict:
    """Linear extrapolation of (λ, E) to α = 0 from the last two points."""
    a, b = branch[-2], branch[-1]
    da = b.alpha - a.alpha
    if da == 0:
        raise ValueError("last two points share the same α")

    def ext(fa, fb):
        return fb - b.alpha * (fb - fa) / da

    return {
        "lambda_infinity": ext(a.lam, b.lam),
        "energy": ext(a.energy, b.energy),
        "alpha_last": b.alpha,
        "lambda_last": b.lam,
        "energy_last": b.energy,
    }


def fold_count(branch) -> int:
    return sum(1 for p in branch if p.is_fold)
