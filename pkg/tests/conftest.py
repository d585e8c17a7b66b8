import pytest

from plasmacont.continuation import ContinuationConfig, trace_branch
from plasmacont.geometry import DomainSpec, build_mesh, dumbbell_vertices
from plasmacont.newton import PlasmaConfig, newton_solve

DUMBBELL = DomainSpec("polygon", vertices=dumbbell_vertices())
DUMBBELL_CC = ContinuationConfig(ds_init=0.2, ds_max=1.0, lambda_cap=50.0)


@pytest.fixture(scope="session")
def disk16():
    return build_mesh(DomainSpec("disk"), 16)


@pytest.fixture(scope="session")
def disk32():
    return build_mesh(DomainSpec("disk"), 32)


@pytest.fixture(scope="session")
def disk64():
    return build_mesh(DomainSpec("disk"), 64)


@pytest.fixture(scope="session")
def square32():
    return build_mesh(DomainSpec("rectangle"), 32)


@pytest.fixture(scope="session")
def disk_state(disk32):
    """Solved disk state at λ = 1, p = 2."""
    return newton_solve(disk32, PlasmaConfig(p=2.0), 1.0)


@pytest.fixture(scope="session")
def disk_branch(disk32):
    return trace_branch(disk32, PlasmaConfig(p=2.0))


@pytest.fixture(scope="session")
def disk_branch64(disk64):
    return trace_branch(disk64, PlasmaConfig(p=2.0))


@pytest.fixture(scope="session")
def square_branch(square32):
    return trace_branch(square32, PlasmaConfig(p=2.0))


@pytest.fixture(scope="session")
def dumbbell32():
    return build_mesh(DUMBBELL, 32)


@pytest.fixture(scope="session")
def dumbbell_branch(dumbbell32):
    """p = 16 branch with a pair of turning points near λ ≈ 1.71."""
    return trace_branch(dumbbell32, PlasmaConfig(p=16.0), DUMBBELL_CC)
