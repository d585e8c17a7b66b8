import math

import numpy as np
import pytest

from plasmacont.geometry import (DomainSpec, GeometryError, PerturbationTooLarge, build_mesh,
                                 dumbbell_vertices, load_mesh, perturb_domain, save_mesh)
from plasmacont.oracles import polygon_measure


def test_disk_unit_area(disk64):
    assert abs(disk64.measure - 1.0) < 1e-3
    r = np.hypot(*disk64.nodes[disk64.boundary].T)
    # inscribed polygon rescaled to unit area: slightly outside the circle
    assert np.ptp(r) < 1e-12
    assert r[0] == pytest.approx(1 / math.sqrt(math.pi), rel=1e-3)
    assert r[0] > 1 / math.sqrt(math.pi)


def test_square_exact_measure():
    m = build_mesh(DomainSpec("rectangle"), 64)
    assert m.measure == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(m.nodes.min(0), -0.5) and np.allclose(m.nodes.max(0), 0.5)


@pytest.mark.parametrize("spec", [
    DomainSpec("disk"),
    DomainSpec("rectangle", aspect=2.5),
    DomainSpec("polygon", vertices=((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2))),
    DomainSpec("polygon", vertices=dumbbell_vertices()),
    DomainSpec("ball3d"),
])
def test_mesh_invariants(spec):
    m = build_mesh(spec, 16)
    # measure: quadrature weights sum to the cell measures and to 1 within 10 h²
    assert abs(m.measure - 1.0) <= 10 * m.h_max ** 2
    if m.kind == "tri":
        assert m.quad_weights.sum() == pytest.approx(m.cell_areas().sum(), rel=1e-12)
        assert np.all(m.cell_areas() > 0)
    idx = m.interior_index
    assert np.all(idx[m.boundary] == -1)
    assert sorted(idx[~m.boundary]) == list(range(m.n_interior))


def test_polygon_boundary_flags():
    m = build_mesh(DomainSpec("rectangle"), 8)
    x, y = m.nodes.T
    on_edge = np.isclose(np.abs(x), 0.5) | np.isclose(np.abs(y), 0.5)
    assert np.array_equal(on_edge, m.boundary)


def test_perturbed_disk_measure():
    m = build_mesh(DomainSpec("perturbed_disk", amplitude=0.05, modes=(3,), seed=7), 64)
    assert abs(m.measure - 1.0) < 1e-3
    # independent check: shoelace area of the boundary polygon
    from plasmacont.geometry import _boundary_loops
    loop = _boundary_loops(m.cells)[0]
    assert polygon_measure(m.nodes[loop]) == pytest.approx(m.measure, rel=1e-12)


def test_perturb_identity(disk16):
    assert perturb_domain(disk16, 0.0, (2,), 1) is disk16


def test_perturb_mode2(disk32):
    m = perturb_domain(disk32, 0.05, (2,), 1)
    assert abs(m.measure - 1.0) < 1e-3
    assert m.spec.kind == "perturbed_disk" and m.spec.seed == 1


def test_perturbation_too_large():
    base = build_mesh(DomainSpec("disk"), 8)
    with pytest.raises(PerturbationTooLarge):
        perturb_domain(base, 0.5, (8,), 0)


def test_perturbed_polygon_reproducible():
    spec = DomainSpec("polygon", vertices=dumbbell_vertices(), amplitude=0.01, modes=(2, 3), seed=4)
    a, b = build_mesh(spec, 16), build_mesh(spec, 16)
    assert np.array_equal(a.nodes, b.nodes)
    assert abs(a.measure - 1) < 1e-12


def test_bad_specs():
    with pytest.raises(GeometryError):
        DomainSpec("torus")
    with pytest.raises(GeometryError):
        build_mesh(DomainSpec("polygon", vertices=((0, 0), (1, 0), (2, 0))), 8)
    with pytest.raises(GeometryError):
        build_mesh(DomainSpec("polygon", vertices=((0, 0), (1, 1), (1, 0), (0, 1))), 8)
    with pytest.raises(GeometryError):
        DomainSpec("rectangle", aspect=-1)


def test_save_load_roundtrip(tmp_path, disk16):
    save_mesh(disk16, tmp_path / "m.txt")
    m = load_mesh(tmp_path / "m.txt")
    assert np.array_equal(m.nodes, disk16.nodes)
    assert np.array_equal(m.cells, disk16.cells)
    assert np.array_equal(m.boundary, disk16.boundary)
    assert np.allclose(m.quad_weights, disk16.quad_weights, rtol=0, atol=1e-15)


def test_ball3d_measure():
    m = build_mesh(DomainSpec("ball3d"), 32)
    assert m.dim == 3
    assert m.measure == pytest.approx(1.0, rel=1e-12)
