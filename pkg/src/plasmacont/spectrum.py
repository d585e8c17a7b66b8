"""Spectrum of the nonlocal linearized operator and Sobolev constants.

The eigenproblem  -Δφ - λp W[φ] = σ W[φ]  (W = ρ^{1/q}, [φ] = φ - <φ>) is
solved in its discrete generalized form

    A v = κ B v,    κ = λp + σ,    B = M_W - b_W b_W^T / m,

where ``B`` is the weighted mass matrix with the weighted-constant direction
deflated.  ``B`` is positive definite on the interior unknowns (constants
are not in the Dirichlet space), so every κ is positive and the lowest
eigenvalues come out of shift-invert Lanczos around κ = 0, which only needs
the cached stiffness factorization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .geometry import Mesh
from .newton import PlasmaState, SolverError
from .operators import Field, operators_for

__all__ = [
    "EigenSolverError",
    "SpectrumResult",
    "SobolevResult",
    "projected_mass",
    "eigenpairs",
    "identity_check",
    "sobolev_constant",
]


class EigenSolverError(SolverError):
    pass


@dataclass
class SpectrumResult:
    sigmas: np.ndarray
    phis: list
    means: np.ndarray             # <φ_k>_λ
    projected_norms: np.ndarray   # <[φ_k]²>_λ
    identity_residuals: np.ndarray
    kappas: np.ndarray            # λp + σ_k
    lam: float
    m_lambda: float

    @property
    def indicators(self) -> np.ndarray:
        """Transversality indicators <φ_k>_λ / (m_λ ‖φ_k‖_λ)."""
        norms = np.array([_norm_lambda(self, k) for k in range(len(self.sigmas))])
        return self.means / (self.m_lambda * norms)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "sigmas": [float(s) for s in self.sigmas],
            "means": [float(s) for s in self.means],
            "identity_residuals": [float(s) for s in self.identity_residuals],
        }


def _norm_lambda(res, k):
    return math.sqrt(res.projected_norms[k] + res.means[k] ** 2)


@dataclass
class SobolevResult:
    t: float
    Lambda: float
    minimizer: Field
    iterations: int


def projected_mass(state: PlasmaState):
    """Return ``(M_W, b_W, m)`` so that ``B = M_W - b_W b_W^T / m``."""
    ops = operators_for(state.mesh)
    W = state.weight
    return ops.mass_matrix(W), ops.load(W), ops.integrate_q(W)


def _b_operator(MW, bW, m):
    n = MW.shape[0]

    def mv(x):
        x = np.asarray(x).reshape(-1)
        return MW @ x - bW * (bW @ x) / m

    return spla.LinearOperator((n, n), matvec=mv, dtype=float)


def _shift_operator(ops, MW, bW, m, shift):
    """(A - s B)^{-1} by Sherman-Morrison on the sparse part A - s M_W."""
    n = ops.n
    if shift == 0:
        return spla.LinearOperator((n, n), matvec=lambda x: ops.solve(np.asarray(x).reshape(-1)),
                                   dtype=float)
    lu = spla.splu((ops.A - shift * MW).tocsc())
    c = shift / m
    z = lu.solve(bW)
    denom = 1.0 + c * (bW @ z)
    if abs(denom) < 1e-14:
        raise EigenSolverError("shift hits a rank-one resonance; move the shift")

    def mv(x):
        y = lu.solve(np.asarray(x, dtype=float).reshape(-1))
        return y - z * (c * (bW @ y) / denom)

    return spla.LinearOperator((n, n), matvec=mv, dtype=float)


def _dense_pencil(ops, MW, bW, m):
    A = ops.A.toarray()
    B = MW.toarray() - np.outer(bW, bW) / m
    return A, B


def eigenpairs(state: PlasmaState, k: int = 4, shift: float | None = None,
               method: str = "auto", tol: float = 1e-13) -> SpectrumResult:
    """Lowest ``k`` eigenpairs of the linearized operator at ``state``.

    Parameters
    ----------
    shift : float, optional
        Target value of σ for shift-invert; by default the lowest
        eigenvalues are returned (shift at κ = 0).
    method : {"auto", "sparse", "dense"}
        "dense" solves the full generalized problem with LAPACK; "auto" uses
        it only for tiny meshes.
    """
    ops = operators_for(state.mesh)
    p, lam = state.config.p, state.lam
    if np.any(state.base <= 0):
        raise EigenSolverError("eigenpairs need a positive state (ρ > 0)")
    MW, bW, m = projected_mass(state)
    n = ops.n
    if method == "auto":
        method = "dense" if n <= max(60, 3 * k) else "sparse"
    if method == "dense":
        A, B = _dense_pencil(ops, MW, bW, m)
        kap, vecs = sla.eigh(A, B)
        if shift is not None:
            order = np.argsort(np.abs(kap - (lam * p + shift)))[:k]
            order = order[np.argsort(kap[order])]
        else:
            order = np.arange(min(k, n))
        kap, vecs = kap[order], vecs[:, order]
    else:
        if k >= n - 1:
            raise EigenSolverError("too many eigenpairs requested for the sparse solver")
        kshift = 0.0 if shift is None else lam * p + shift
        Bop = _b_operator(MW, bW, m)
        OPinv = _shift_operator(ops, MW, bW, m, kshift)
        try:
            kap, vecs = spla.eigsh(ops.A, k=k, M=Bop, sigma=kshift, OPinv=OPinv, which="LM",
                                   v0=np.ones(n), tol=tol, maxiter=max(1000, 20 * n))
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"eigen solver did not converge: {exc}") from exc
        order = np.argsort(kap)
        kap, vecs = kap[order], vecs[:, order]

    sig = kap - lam * p
    phis, means, pnorms, ids = [], [], [], []
    wq = state.mesh.quad_weights * state.weight
    for j in range(len(kap)):
        v = vecs[:, j]
        vq = ops.Q @ v
        mean = float(wq @ vq) / m
        proj = float(wq @ (vq - mean) ** 2) / m
        scale = 1.0 / math.sqrt(proj)
        # sign convention: positive weighted mean, else positive largest entry
        if abs(mean) * scale > 1e-10:
            scale *= math.copysign(1.0, mean)
        else:
            scale *= math.copysign(1.0, v[np.argmax(np.abs(v))])
        v = v * scale
        phi = Field(state.mesh, v)
        phis.append(phi)
        means.append(mean * scale)
        pnorms.append(proj * scale * scale)
        ids.append(identity_check(state, sig[j], phi)["residual"])
    return SpectrumResult(sig, phis, np.array(means), np.array(pnorms), np.array(ids),
                          kap, lam, m)


def identity_check(state: PlasmaState, sigma: float, phi: Field) -> dict:
    """Residual of  <φ>/m = (λ(p-1) + σ) <ψ [φ]>  and of  1/m = α + λ<ψ>.

    Both residuals are relative to the natural magnitude of the terms
    (Cauchy-Schwarz bound for the right-hand side), so they stay meaningful
    when both sides vanish.
    """
    p, lam = state.config.p, state.lam
    m = state.m_lambda
    phq = phi.at_quad()
    psq = state.psi_q
    mphi = state.mean(phq)
    mpsi = state.mean(psq)
    proj = phq - mphi
    lhs = mphi / m
    coef = lam * (p - 1.0) + sigma
    rhs = coef * state.mean(psq * proj)
    scale = abs(lhs) + abs(coef) * math.sqrt(state.mean(psq ** 2) * state.mean(proj ** 2))
    res = abs(lhs - rhs) / scale if scale > 0 else 0.0
    mass_res = abs(1.0 / m - (state.alpha + lam * mpsi)) * m
    return {"lhs": lhs, "rhs": rhs, "residual": res, "mass_identity_residual": mass_res}


def sobolev_constant(mesh: Mesh, t: float, tol: float = 1e-10, max_iter: int = 5000,
                     initial=None) -> SobolevResult:
    """Best constant inf ∫|∇w|² / (∫|w|^t)^{2/t} over the discrete Dirichlet space.

    t = 2 is the first Dirichlet eigenvalue.  Otherwise the normalized
    iteration w <- G[|w|^{t-2} w] / ‖·‖_t is run from ``initial`` (default
    G[1]); a step that raises the quotient is damped towards the old
    iterate.  Converged when the quotient stagnates below ``tol``
    (relative) and the iterate has settled.
    """
    ops = operators_for(mesh)
    n = ops.n
    if t < 1:
        raise ValueError("t must be at least 1")
    if mesh.kind == "tri" or mesh.dim == 2:
        pass
    elif not t < 2 * mesh.dim / (mesh.dim - 2):
        raise ValueError("t must be below the critical Sobolev exponent")
    w = ops.green_q(ops.ones_q) if initial is None else np.array(
        initial.values if isinstance(initial, Field) else initial, dtype=float)

    def lp_norm(v):
        return float(ops.w @ np.abs(ops.Q @ v) ** t) ** (1.0 / t)

    def quotient(v):
        return ops.dirichlet(v) / lp_norm(v) ** 2

    if t == 2:
        if n > 3:
            kap, vec = spla.eigsh(ops.A, k=1, M=ops.M, sigma=0.0, which="LM", v0=np.ones(n),
                                  tol=1e-14)
            w = vec[:, 0]
        else:
            kap, vec = sla.eigh(ops.A.toarray(), ops.M.toarray())
            w = vec[:, 0]
        w = w * math.copysign(1.0, w.sum()) / lp_norm(w)
        return SobolevResult(2.0, quotient(w), Field(mesh, w), 1)

    w = w / lp_norm(w)
    R = quotient(w)
    for it in range(1, max_iter + 1):
        wq = ops.Q @ w
        new = ops.solve(ops.load(np.abs(wq) ** (t - 2.0) * wq))
        new /= lp_norm(new)
        Rn = quotient(new)
        theta = 1.0
        while Rn > R * (1 + 1e-15) and theta > 1e-3:
            theta *= 0.5
            trial = (1 - theta) * w + theta * new
            trial /= lp_norm(trial)
            Rn = quotient(trial)
            new = trial
        change = float(np.max(np.abs(new - w)) / np.max(np.abs(new)))
        done = abs(R - Rn) <= tol * Rn and change < 1e-7
        w, R = new, Rn
        if done:
            return SobolevResult(float(t), R, Field(mesh, w), it)
    raise EigenSolverError(f"Sobolev iteration for t={t} did not converge in {max_iter} steps")
