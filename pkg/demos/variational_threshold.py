"""
Where the free-energy minimizer stops existing
==============================================

Minimize the free energy J over densities for increasing λ and look
for the first λ at which the minimizer runs into the boundary.  On the
disk this threshold coincides with the end of the branch.
"""
import numpy as np

from plasmacont.continuation import endpoint_extrapolation, trace_branch
from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import PlasmaConfig, newton_solve
from plasmacont.spectrum import sobolev_constant
from plasmacont.variational import identity_suite, lambda_star_star, minimize_free_energy

mesh = build_mesh(DomainSpec("disk"), 32)
cfg = PlasmaConfig(p=2.0)

# below Λ(p+2)/p the minimizer is unique; check it against Newton there
lam_u = sobolev_constant(mesh, 4.0).Lambda / 2
print("uniqueness threshold", lam_u)

it, rows = None, []
for lam in np.linspace(0.0, 0.95 * lam_u, 6):
    it = minimize_free_energy(mesh, cfg, lam, initial=it)
    rows.append(it)
    nt = newton_solve(mesh, cfg, lam)
    print(f"λ={lam:7.4f}  J={it.J_value:.8f}  α={it.alpha:.8f}  Newton α={nt.alpha:.8f}")

rep = identity_suite(rows)
print("energy identity: constant", rep["fitted_constant"], "residual", rep["identity_residual"])

lss = lambda_star_star(mesh, cfg)
linf = endpoint_extrapolation(trace_branch(mesh, cfg))["lambda_infinity"]
print("λ**", lss, " λ_∞", linf, " relative gap", abs(lss - linf) / linf)
