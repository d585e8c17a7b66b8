"""
Following the solution branch on the unit-area disk
====================================================

Start at λ = 0 (uniform density, α = 1) and continue until α reaches
zero.  Along the way we watch σ_1 (it stays positive on the disk, so
there are no turning points), and at the end we compare the
extrapolated endpoint with the radial closed form.
"""
import math

from plasmacont.continuation import endpoint_extrapolation, fold_count, trace_branch
from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import PlasmaConfig
from plasmacont.oracles import disk_E0, disk_E_star

mesh = build_mesh(DomainSpec("disk"), 32)
print(mesh)

branch = trace_branch(mesh, PlasmaConfig(p=2.0))
print(f"{len(branch)} points, {fold_count(branch)} folds")

# a thinned table of the branch
print(f"{'lambda':>10} {'alpha':>10} {'energy':>10} {'sigma1':>10}")
for b in branch[:: max(1, len(branch) // 12)] :
    print(f"{b.lam:10.5f} {b.alpha:10.5f} {b.energy:10.6f} {b.sigma1:10.4f}")

# energy at λ = 0 against 1/(16π)
print("E_0      ", branch[0].energy, "exact", disk_E0())

end = endpoint_extrapolation(branch)
print("λ_∞      ", end["lambda_infinity"])
print("E at α=0 ", end["energy"], "exact", disk_E_star(2.0))
print("         3/(16π) =", 3 / (16 * math.pi))
