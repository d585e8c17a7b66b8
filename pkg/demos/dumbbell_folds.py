"""
Turning points on a dumbbell
============================

Two almost equal lobes joined by a thin neck.  At large p the density
concentrates in one lobe and the branch turns back twice.  Each turning
point is located to solver precision and its kernel is classified.
"""
from plasmacont.continuation import ContinuationConfig, fold_count, trace_branch
from plasmacont.geometry import DomainSpec, build_mesh, dumbbell_vertices
from plasmacont.newton import PlasmaConfig
from plasmacont.spectrum import identity_check

mesh = build_mesh(DomainSpec("polygon", vertices=dumbbell_vertices()), 32)
cc = ContinuationConfig(ds_init=0.2, ds_max=1.0, lambda_cap=50.0)
branch = trace_branch(mesh, PlasmaConfig(p=16.0), cc)
print(f"{len(branch)} points, {fold_count(branch)} folds")

for b in branch:
    if not b.is_fold:
        continue
    f = b.fold
    print(f"fold at λ={f.lam:.6f} α={f.alpha:.6f}")
    print(f"  σ1={f.sigma1:.2e}  σ2={f.sigma2:.3f}  gap={f.kernel_gap:.3f}")
    print(f"  indicator={f.indicator:+.4f}  verdict={f.verdict}  sign pattern ok={f.sign_pattern_ok}")
    # with σ = 0 the kernel field satisfies the spectral identity on its own
    print("  identity residual", identity_check(b.state, 0.0, f.phi)["residual"])

# λ is not monotone in arclength any more
lams = [b.lam for b in branch]
turns = sum(1 for a, b, c in zip(lams, lams[1:], lams[2:]) if (b - a) * (c - b) < 0)
print("direction changes in λ:", turns)
