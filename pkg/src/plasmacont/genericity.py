"""Statistical probe of the generic fold alternative on perturbed domains."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .continuation import ContinuationConfig, StalledBranch, trace_branch
from .geometry import DomainSpec, GeometryError, build_mesh
from .newton import PlasmaConfig, SolverError

__all__ = ["ProbeReport", "probe", "VERDICTS"]

log = logging.getLogger(__name__)

VERDICTS = ("generic_simple_transversal", "degenerate_kernel", "degenerate_indicator", "no_fold_found")
_MAP = {"transversal_fold": "generic_simple_transversal",
        "degenerate_kernel": "degenerate_kernel",
        "degenerate_indicator": "degenerate_indicator"}


@dataclass
class ProbeReport:
    seed: int
    fold_lambda: float
    kernel_gap: float
    indicator: float
    verdict: str
    mean_sign_consistent: bool | None = None     # sign <φ> == sign <[φ],ψ>
    min_sigma1: float = math.nan
    lambda_end: float = math.nan
    cause: str = ""
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fold_lambda": self.fold_lambda,
            "kernel_gap": self.kernel_gap,
            "indicator": self.indicator,
            "verdict": self.verdict,
            "mean_sign_consistent": self.mean_sign_consistent,
            "min_sigma1": self.min_sigma1,
            "lambda_end": self.lambda_end,
            "cause": self.cause,
            "thresholds": dict(self.thresholds),
        }


def _one(spec, seed, p, resolution, cc):
    thr = {"gap_relative": cc.gap_threshold, "indicator": cc.indicator_threshold}
    nan = math.nan
    try:
        mesh = build_mesh(replace(spec, seed=seed), resolution)
        try:
            branch = trace_branch(mesh, PlasmaConfig(p=p, N=mesh.dim), cc)
        except StalledBranch as exc:
            branch = exc.points
            if not any(b.is_fold for b in branch):
                raise
    except (SolverError, GeometryError) as exc:
        return ProbeReport(seed, nan, nan, nan, "no_fold_found", cause=f"{type(exc).__name__}: {exc}",
                           thresholds=thr)
    sig = [b.sigma1 for b in branch if not math.isnan(b.sigma1)]
    min_s = min(sig) if sig else nan
    folds = [b for b in branch if b.is_fold]
    if not folds:
        return ProbeReport(seed, nan, nan, nan, "no_fold_found", min_sigma1=min_s,
                           lambda_end=branch[-1].lam, cause="σ_1 stayed positive along the branch",
                           thresholds=thr)
    f = folds[0].fold
    return ProbeReport(seed, f.lam, f.kernel_gap, f.indicator, _MAP[f.verdict], f.same_sign,
                       min_s, branch[-1].lam, thresholds=thr)


def probe(spec: DomainSpec, p: float = 2.0, n_seeds: int = 5, resolution: int = 32,
          cont_config: ContinuationConfig | None = None, seeds=None, workers: int = 1) -> list:
    """Trace the branch on ``n_seeds`` perturbations of ``spec`` and classify the first fold.

    Seeds are ``spec.seed, spec.seed + 1, ...`` unless ``seeds`` is given.
    Per-seed failures become ``no_fold_found`` reports carrying the cause.
    The result does not depend on ``workers``.
    """
    cc = cont_config or ContinuationConfig()
    seeds = list(seeds) if seeds is not None else [spec.seed + k for k in range(n_seeds)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda s: _one(spec, s, p, resolution, cc), seeds))
    return [_one(spec, s, p, resolution, cc) for s in seeds]
