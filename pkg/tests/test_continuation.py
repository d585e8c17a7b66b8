import math

import numpy as np
import pytest

from plasmacont.continuation import (ContinuationConfig, StalledBranch, endpoint_extrapolation,
                                     fold_count, fold_handler, lambda_one_estimate, trace_branch)
from plasmacont.geometry import DomainSpec, build_mesh
from plasmacont.newton import PlasmaConfig, trivial_state
from plasmacont.operators import operators_for
from plasmacont.oracles import disk_E_star, radial_sobolev_constant

# frozen from the resolution-64 disk run (extrapolated to α = 0)
LAMBDA_INF_DISK64 = 12.491167172321985


def test_disk_monotone(disk_branch):
    lam = np.array([b.lam for b in disk_branch])
    a = np.array([b.alpha for b in disk_branch])
    E = np.array([b.energy for b in disk_branch])
    assert np.all(np.diff(lam) > 0)
    assert np.all(np.diff(a) < 0)
    assert np.all(np.diff(E) > 0)
    assert fold_count(disk_branch) == 0


def test_disk_endpoint(disk_branch64):
    ep = endpoint_extrapolation(disk_branch64)
    assert ep["energy"] == pytest.approx(disk_E_star(2.0), rel=0.02)
    assert ep["lambda_infinity"] == pytest.approx(LAMBDA_INF_DISK64, rel=1e-6)
    assert disk_branch64[-1].alpha == pytest.approx(1e-3, rel=1e-12)


def test_first_point(square_branch):
    b = square_branch[0]
    assert (b.lam, b.alpha) == (0.0, 1.0)
    assert b.energy == pytest.approx(trivial_state(b.state.mesh, PlasmaConfig()).energy, rel=1e-14)


def _vec(mesh, lam_part, alpha_part, psi_part):
    return np.concatenate([psi_part, [alpha_part, lam_part]])


def _metric(mesh):
    M = operators_for(mesh).M
    n = M.shape[0]

    def inner(a, b):
        return float(a[n] * b[n] + a[n + 1] * b[n + 1] + a[:n] @ (M @ b[:n]))
    return inner


@pytest.mark.parametrize("name", ["disk_branch", "dumbbell_branch"])
def test_tangent_unit_norm(name, request):
    br = request.getfixturevalue(name)
    inner = _metric(br[0].state.mesh)
    for b in br:
        t = _vec(None, *b.tangent)
        assert inner(t, t) == pytest.approx(1.0, abs=1e-10)


def test_arclength_equation(dumbbell_branch):
    br = [b for b in dumbbell_branch if not b.is_fold]
    inner = _metric(br[0].state.mesh)
    checked = 0
    for a, b in zip(br, br[1:]):
        if b.mode != "arclength":
            continue
        xa = _vec(None, a.lam, a.alpha, a.state.psi.values)
        xb = _vec(None, b.lam, b.alpha, b.state.psi.values)
        h = inner(_vec(None, *a.tangent), xb - xa)
        assert h == pytest.approx(b.ds, abs=1e-9)
        checked += 1
    assert checked > 5


def test_dumbbell_folds(dumbbell_branch):
    folds = [b for b in dumbbell_branch if b.is_fold]
    assert len(folds) == 2
    for f in folds:
        assert abs(f.sigma1) <= 1e-4
        assert abs(f.tangent[0]) <= 1e-6            # dλ/ds = 0 where σ_1 = 0
        assert f.fold.verdict == "transversal_fold"
        assert f.fold.same_sign                       # <φ> and <[φ],ψ> share sign
        assert f.fold.sign_pattern_ok
        assert abs(f.sigma2 - f.sigma1) > 1.0         # simple kernel


def test_sign_structure_around_fold(dumbbell_branch):
    i = next(k for k, b in enumerate(dumbbell_branch) if b.is_fold)
    before, after = dumbbell_branch[i - 1], dumbbell_branch[i + 1]
    assert before.sigma1 > 0 and before.tangent[0] > 0
    assert after.sigma1 < 0 and after.tangent[0] < 0
    # between the folds λ decreases while α keeps decreasing
    j = [k for k, b in enumerate(dumbbell_branch) if b.is_fold][1]
    mid = dumbbell_branch[i + 1:j]
    assert all(b.tangent[0] < 0 and b.sigma1 < 0 for b in mid)


def test_disk_kernel_pair_is_flagged(disk_state):
    # the lowest disk eigenvalue is a rotation pair: the handler reports a 2-D kernel
    rep = fold_handler(disk_state)
    assert rep.verdict == "degenerate_kernel"


def test_indicator_threshold_configurable(dumbbell_branch):
    f = next(b for b in dumbbell_branch if b.is_fold)
    rep = fold_handler(f.state, ContinuationConfig(indicator_threshold=10.0))
    assert rep.verdict == "degenerate_indicator"


def test_square_simplicity(square_branch):
    from plasmacont.spectrum import eigenpairs

    st = square_branch[len(square_branch) // 2].state
    res = eigenpairs(st, 4)
    for k in range(4):
        if abs(res.indicators[k]) > 1e-3:
            others = np.delete(res.sigmas, k)
            assert np.min(np.abs(others - res.sigmas[k])) > 1e-3 * abs(res.sigmas[k])


def test_lambda_one_disk(disk_branch):
    l1 = lambda_one_estimate(disk_branch)
    assert l1 > radial_sobolev_constant(4.0) / 2
    assert l1 > 0


def test_lambda_one_square_refinement(square_branch):
    fine = trace_branch(build_mesh(DomainSpec("rectangle"), 64), PlasmaConfig())
    assert lambda_one_estimate(square_branch) == pytest.approx(lambda_one_estimate(fine), rel=0.01)


def test_stalled_branch(disk16):
    with pytest.raises(StalledBranch) as exc:
        trace_branch(disk16, PlasmaConfig(), ContinuationConfig(max_correction=1e-14, ds_min=1e-3,
                                                                ds_init=0.5))
    assert len(exc.value.points) >= 1
    assert exc.value.points[0].lam == 0.0


def test_lambda_cap_stops(disk16):
    br = trace_branch(disk16, PlasmaConfig(), ContinuationConfig(lambda_cap=3.0))
    assert br[-1].lam > 3.0 and br[-2].lam <= 3.0
    assert br[-1].alpha > 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        ContinuationConfig(ds_min=1.0, ds_init=0.5)
    with pytest.raises(ValueError):
        ContinuationConfig(alpha_stop=0)


def test_extrapolation_needs_distinct_alpha(disk_branch):
    with pytest.raises(ValueError):
        endpoint_extrapolation([disk_branch[-1], disk_branch[-1]])


def test_endpoint_convergence(disk_branch, disk_branch64):
    # the endpoint energy error shrinks under refinement
    e32 = abs(endpoint_extrapolation(disk_branch)["energy"] - disk_E_star(2.0))
    e64 = abs(endpoint_extrapolation(disk_branch64)["energy"] - disk_E_star(2.0))
    assert e64 < e32
    assert math.isfinite(e64)
