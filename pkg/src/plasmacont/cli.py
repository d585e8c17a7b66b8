"""Command-line front end.

    plasmacont <subcommand> [--config FILE] [--out DIR] [--resolution N] [--verbose]

Every run writes its artifacts plus ``manifest.json`` (config echo, config
hash, library versions) into the output directory.  Wall-clock timings go to
``run_log.txt`` so the JSON/CSV outputs stay byte-reproducible.
Exit codes: 0 success, 1 usage, 2 solver failure, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .continuation import StalledBranch, endpoint_extrapolation, fold_count, lambda_one_estimate, trace_branch
from .geometry import GeometryError, build_mesh, save_mesh
from .newton import PlasmaConfig, SolverError, newton_solve
from .report import config_hash, load_state, plot_script, save_state, write_csv, write_json

__all__ = ["main", "SUBCOMMANDS", "OUT_ENV"]

log = logging.getLogger("plasmacont")

OUT_ENV = "PLASMACONT_OUT"
SUBCOMMANDS = ("mesh", "branch", "spectrum", "variational", "dual", "continuum", "probe", "verify")
EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    ap = _Parser(prog="plasmacont", description="Branch tracing for the constrained plasma problem.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--verbose", "-v", action="count", default=None)
        if name == "spectrum":
            sp.add_argument("--state", help="state .npz written by `branch`")
            sp.add_argument("--lambda", dest="lam", type=float)
        if name == "probe":
            sp.add_argument("--seeds", type=int)
            sp.add_argument("--amplitude", type=float)
            sp.add_argument("--modes", help="comma-separated Fourier modes")
        if name == "verify":
            sp.add_argument("--criteria", help="comma-separated criterion numbers (default: all)")
    return ap


def _ints(text, flag):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"{flag}: expected comma-separated integers") from exc


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.resolution is not None:
        if args.resolution < 8:
            raise ConfigError("resolution must be at least 8", "resolution")
        cfg = replace(cfg, resolution=args.resolution)
    if args.verbose is not None:
        cfg = replace(cfg, verbosity=args.verbose)
    if getattr(args, "lam", None) is not None:
        cfg = replace(cfg, lam=args.lam)
    if getattr(args, "seeds", None) is not None:
        cfg = replace(cfg, seeds=args.seeds)
    if getattr(args, "amplitude", None) is not None:
        cfg = replace(cfg, amplitude=args.amplitude)
    if getattr(args, "modes", None):
        cfg = replace(cfg, modes=_ints(args.modes, "--modes"))
    if getattr(args, "criteria", None):
        cfg = replace(cfg, criteria=_ints(args.criteria, "--criteria"))
    return cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or cfg.outputs)


# --------------------------------------------------------------------------
# subcommands: each returns (exit code, list of written files)

def _plasma_config(cfg, mesh):
    return PlasmaConfig(p=cfg.p, N=mesh.dim)


def _trace(cfg, mesh):
    try:
        return trace_branch(mesh, _plasma_config(cfg, mesh), cfg.continuation)
    except StalledBranch as exc:
        log.warning("branch stalled: %s", exc)
        return exc.points


def cmd_mesh(cfg, out, h):
    mesh = build_mesh(cfg.domain, cfg.resolution)
    save_mesh(mesh, out / "mesh.txt")
    info = {"kind": mesh.kind, "nodes": mesh.n_nodes, "cells": len(mesh.cells),
            "interior_nodes": mesh.n_interior, "measure": mesh.measure, "h_max": mesh.h_max,
            "dim": mesh.dim, "domain": cfg.domain.to_dict()}
    return 0, [write_json(out / "mesh.json", info, h), out / "mesh.txt"]


BRANCH_COLUMNS = ("s", "lambda", "alpha", "energy", "sigma1", "mass_residual", "is_fold")


def cmd_branch(cfg, out, h):
    mesh = build_mesh(cfg.domain, cfg.resolution)
    br = _trace(cfg, mesh)
    rows = [(b.s, b.lam, b.alpha, b.energy, b.sigma1, b.mass_residual, b.is_fold) for b in br]
    files = [write_csv(out / "branch.csv", BRANCH_COLUMNS, rows, h)]
    reached = br[-1].alpha <= cfg.continuation.alpha_stop * (1 + 1e-12)
    ep = endpoint_extrapolation(br) if reached else {}
    folds = [b.fold for b in br if b.is_fold]
    summary = {
        "lambda_one": lambda_one_estimate(br),
        "lambda_infinity_estimate": ep.get("lambda_infinity", math.nan),
        "endpoint_energy": ep.get("energy", math.nan),
        "fold_count": fold_count(br),
        "endpoint_reached": reached,
        "points": len(br),
        "folds": [{"lambda": f.lam, "alpha": f.alpha, "sigma1": f.sigma1, "indicator": f.indicator,
                   "kernel_gap": f.kernel_gap, "verdict": f.verdict, "sign_pattern_ok": f.sign_pattern_ok}
                  for f in folds],
    }
    files.append(write_json(out / "summary.json", summary, h))
    (out / "plot_branch.py").write_text(plot_script("branch.csv", "lambda", ["alpha", "energy", "sigma1"], h,
                                                    "positive branch"))
    save_state(out / "state_final.npz", br[-1].state)
    files += [out / "plot_branch.py", out / "state_final.npz"]
    return 0, files


def cmd_spectrum(cfg, out, h, state_path=None):
    from .spectrum import eigenpairs, sobolev_constant

    if state_path:
        st = load_state(state_path)
    else:
        mesh = build_mesh(cfg.domain, cfg.resolution)
        lam = cfg.lam if cfg.lam is not None else 0.5 * sobolev_constant(mesh, 2 * cfg.p).Lambda / cfg.p
        st = newton_solve(mesh, _plasma_config(cfg, mesh), lam)
    res = eigenpairs(st, cfg.n_eigs)
    ind = res.indicators
    rows = [(k + 1, res.sigmas[k], res.means[k], ind[k], res.identity_residuals[k])
            for k in range(len(res.sigmas))]
    files = [write_csv(out / "spectrum.csv", ("k", "sigma", "mean_phi", "indicator", "identity_residual"),
                       rows, h, comments=[f"lambda: {st.lam!r}", f"alpha: {st.alpha!r}"])]
    doc = res.to_dict()
    doc.update(alpha=st.alpha, indicators=[float(x) for x in ind], m_lambda=res.m_lambda)
    files.append(write_json(out / "spectrum.json", doc, h))
    return 0, files


def cmd_variational(cfg, out, h):
    from .spectrum import sobolev_constant
    from .variational import identity_suite, lambda_star_star, minimize_free_energy

    mesh = build_mesh(cfg.domain, cfg.resolution)
    pc = _plasma_config(cfg, mesh)
    lss = lambda_star_star(mesh, pc, lambda_cap=cfg.continuation.lambda_cap)
    lams = np.linspace(0.0, lss, cfg.n_lambda)
    its, prev = [], None
    for lam in lams:
        prev = minimize_free_energy(mesh, pc, lam, initial=prev)
        its.append(prev)
    rows = [(i.lam, i.J_value, i.alpha, i.energy, i.converged, i.iterations) for i in its]
    files = [write_csv(out / "variational.csv", ("lambda", "J", "alpha", "energy", "converged", "iterations"),
                       rows, h)]
    rep = identity_suite(its)
    rep.pop("rows")
    doc = {"lambda_star_star": lss, "I_star_star": lss ** pc.q,
           "uniqueness_threshold": sobolev_constant(mesh, 2 * cfg.p).Lambda / cfg.p, "identity": rep}
    files.append(write_json(out / "variational.json", doc, h))
    (out / "plot_variational.py").write_text(plot_script("variational.csv", "lambda", ["J", "alpha"], h,
                                                         "free energy"))
    return 0, files + [out / "plot_variational.py"]


def cmd_dual(cfg, out, h):
    from .acceptance import I_star_star_from_branch
    from .dual import disk_inequalities, plasma_region, to_dual
    from .spectrum import sobolev_constant

    mesh = build_mesh(cfg.domain, cfg.resolution)
    br = _trace(cfg, mesh)
    rows = []
    for b in br:
        if not b.lam > 0:
            continue
        d = to_dual(b.state)
        reg = plasma_region(d.v)
        rows.append((b.lam, d.I, d.gamma, reg.positive_measure, reg.negative_measure,
                     reg.level_set_length, d.flux_residual))
    files = [write_csv(out / "dual.csv", ("lambda", "I", "gamma", "plasma_measure", "vacuum_measure",
                                          "free_boundary_length", "flux_residual"), rows, h)]
    doc = {"points": len(rows)}
    if br[-1].alpha <= cfg.continuation.alpha_stop * (1 + 1e-12):
        linf = endpoint_extrapolation(br)["lambda_infinity"]
        doc.update(lambda_infinity=linf, I_star_star=I_star_star_from_branch(br))
        if mesh.dim == 2:
            L = sobolev_constant(mesh, cfg.p + 1).Lambda
            doc["inequalities"] = disk_inequalities(linf, L, cfg.p,
                                                    E_star=endpoint_extrapolation(br)["energy"])
    files.append(write_json(out / "dual.json", doc, h))
    return 0, files


def cmd_continuum(cfg, out, h):
    from .dual import rabinowitz_export

    mesh = build_mesh(cfg.domain, cfg.resolution)
    br = _trace(cfg, mesh)
    pts = rabinowitz_export(br)
    rows = [(c.lam, c.alpha, c.mu, c.sup_u, c.residual_limit_eq) for c in pts]
    files = [write_csv(out / "continuum.csv", ("lambda", "alpha", "mu", "sup_u", "limit_residual"), rows, h)]
    (out / "plot_continuum.py").write_text(plot_script("continuum.csv", "mu", ["sup_u"], h, "continuum"))
    return 0, files + [out / "plot_continuum.py"]


def cmd_probe(cfg, out, h):
    from .genericity import probe

    spec = cfg.domain
    if spec.kind == "disk":
        spec = replace(spec, kind="perturbed_disk")
    spec = replace(spec, amplitude=cfg.amplitude, modes=cfg.modes)
    reps = probe(spec, p=cfg.p, n_seeds=cfg.seeds, resolution=cfg.resolution, cont_config=cfg.continuation)
    doc = {"reports": [r.to_dict() for r in reps],
           "flagged": [r.seed for r in reps if r.verdict in ("degenerate_kernel", "degenerate_indicator")]}
    for r in reps:
        if r.verdict in ("degenerate_kernel", "degenerate_indicator"):
            log.warning("seed %d: %s at λ=%.6g", r.seed, r.verdict, r.fold_lambda)
    return 0, [write_json(out / "probe.json", doc, h)]


def cmd_verify(cfg, out, h):
    from .acceptance import Context, run_all

    results = run_all(cfg.criteria or None, Context(), echo=print)
    rows = [(r.number, r.passed) for r in results]
    files = [write_csv(out / "acceptance.csv", ("criterion", "passed"), rows, h),
             write_json(out / "acceptance.json", {"results": [r.to_dict() for r in results]}, h)]
    npass = sum(r.passed for r in results)
    print(f"{npass}/{len(results)} criteria passed")
    return (0 if npass == len(results) else EXIT_ACCEPTANCE), files


# --------------------------------------------------------------------------

def _versions():
    import shapely

    return {"plasmacont": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "shapely": shapely.__version__, "python": platform.python_version()}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv)
        cfg = _build_config(args)
    except (UsageError, ConfigError) as exc:
        print(f"plasmacont: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"plasmacont: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    level = logging.WARNING - 10 * min(cfg.verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("plasmacont").setLevel(level)

    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_dict()
    if getattr(args, "state", None):
        echo["state_file"] = Path(args.state).name
    h = config_hash({"command": args.command, **echo})
    t0 = time.perf_counter()
    handler = globals()[f"cmd_{args.command}"]
    try:
        if args.command == "spectrum":
            code, files = handler(cfg, out, h, getattr(args, "state", None))
        else:
            code, files = handler(cfg, out, h)
    except (SolverError, GeometryError, ValueError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        write_json(out / "error.json", err, h)
        print(f"plasmacont: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, files = EXIT_SOLVER, [out / "error.json"]
    wall = time.perf_counter() - t0
    manifest = {"command": args.command, "config": echo, "versions": _versions(),
                "outputs": sorted(Path(f).name for f in files), "exit_code": code}
    write_json(out / "manifest.json", manifest, h)
    with open(out / "run_log.txt", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {args.command} exit={code} wall_time={wall:.3f}s "
                 f"config_hash={h}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
