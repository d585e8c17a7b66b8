import math

import pytest

from plasmacont.geometry import DomainSpec, dumbbell_vertices
from plasmacont.genericity import VERDICTS, probe

from conftest import DUMBBELL_CC

DISKS = DomainSpec("perturbed_disk", amplitude=0.05, modes=(2, 3, 4, 5), seed=0)


@pytest.fixture(scope="module")
def disk_reports():
    return probe(DISKS, p=2.0, n_seeds=5, resolution=32)


def test_perturbed_disks_have_no_singular_point(disk_reports):
    # σ_1 stays bounded away from zero on near-disks at p = 2, so there is no fold to classify
    assert [r.seed for r in disk_reports] == [0, 1, 2, 3, 4]
    for r in disk_reports:
        assert r.verdict == "no_fold_found"
        assert r.min_sigma1 > 1.0
        assert "positive" in r.cause
        assert r.thresholds == {"gap_relative": 1e-3, "indicator": 1e-6}


def test_exact_disk(disk16):
    (r,) = probe(DomainSpec("disk"), p=2.0, n_seeds=1, resolution=16)
    assert r.verdict == "no_fold_found" and r.min_sigma1 > 1.0


def test_dumbbell_folds_are_generic():
    spec = DomainSpec("polygon", vertices=dumbbell_vertices(), amplitude=0.01, modes=(2, 3), seed=0)
    reps = probe(spec, p=16.0, n_seeds=2, resolution=32, cont_config=DUMBBELL_CC)
    for r in reps:
        assert r.verdict == "generic_simple_transversal"
        assert abs(r.indicator) > 1e-6
        assert r.kernel_gap > 1e-3
        assert r.mean_sign_consistent
        assert 1.6 < r.fold_lambda < 1.8


def test_reproducible_and_parallel(disk_reports):
    again = probe(DISKS, p=2.0, n_seeds=5, resolution=32, workers=3)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in disk_reports]


def test_failures_are_reported():
    spec = DomainSpec("perturbed_disk", amplitude=0.5, modes=(8,), seed=0)
    (r,) = probe(spec, n_seeds=1, resolution=8)
    assert r.verdict == "no_fold_found"
    assert "PerturbationTooLarge" in r.cause
    assert math.isnan(r.fold_lambda)
    assert r.verdict in VERDICTS
