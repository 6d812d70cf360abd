import json

import numpy as np
import pytest
from scipy import optimize

from cellplan_mcp.canonical import LinkModel, place_lattice
from cellplan_mcp.errors import ConvergenceError, DomainError, InfeasibleDemandError, ScenarioError
from cellplan_mcp.geometry import CellPartition, RectangleDomain, torus_distance
from cellplan_mcp.loadcoupling import (
    LoadVector,
    canonical_uniform_load,
    cell_load,
    compare_domains,
    correlation,
    dimension_network,
    load_fixed_point,
    sweep_canonical,
)

RECT = RectangleDomain(6.84, 4.90)
VOLUME = 120.0 / 0.05


def two_cell_network():
    """Sites at 0 and 1, one demand sample a quarter of the way from each."""
    sites = np.array([0.0, 1.0], dtype=complex)
    partition = CellPartition(
        points=np.array([0.25, 0.75], dtype=complex),
        labels=np.array([0, 1]),
        weights=np.array([0.5, 0.5]),
        n_cells=2,
        domain_area=1.0,
    )
    return sites, partition, np.ones(2)


def test_two_cell_fixed_point_matches_scalar_root():
    sites, partition, density = two_cell_network()
    link = LinkModel(beta=2.0)
    result = load_fixed_point(sites, partition, density, 100.0, link, tol=1e-13)

    # symmetric network: a = 0.5 * V * (r_min / B) / log2(1 + 3**beta / a)
    def residual(a):
        return a - 0.5 * 100.0 * link.rate_ratio / np.log2(1.0 + 3.0**2 / a)

    expected = optimize.brentq(residual, 1e-6, 1.0, xtol=1e-15)
    np.testing.assert_allclose(result.loads, expected, atol=1e-8)
    assert not result.clamped.any()
    assert result.residual <= 1e-13


def test_loads_rise_with_volume_and_noise():
    sites, partition, density = two_cell_network()
    quiet = load_fixed_point(sites, partition, density, 50.0, LinkModel(beta=2.0))
    busy = load_fixed_point(sites, partition, density, 100.0, LinkModel(beta=2.0))
    noisy = load_fixed_point(sites, partition, density, 100.0, LinkModel(beta=2.0, noise=1.0))
    assert np.all(busy.loads > quiet.loads)
    assert np.all(noisy.loads > busy.loads)


def test_overloaded_cells_are_clamped():
    sites, partition, density = two_cell_network()
    result = load_fixed_point(sites, partition, density, 1e5, LinkModel(beta=2.0))
    np.testing.assert_array_equal(result.loads, 1.0)
    assert result.clamped.all()


def test_boundary_cells_see_extra_noise():
    sites, partition, density = two_cell_network()
    link = LinkModel(beta=2.0, noise=1.0, boundary_noise=4.0)
    result = load_fixed_point(sites, partition, density, 100.0, link, boundary=np.array([True, False]))
    assert result.loads[0] > result.loads[1]
    assert result.boundary_mean() == pytest.approx(result.loads[0])
    assert result.interior_mean() == pytest.approx(result.loads[1])


def test_fixed_point_reports_non_convergence():
    sites, partition, density = two_cell_network()
    with pytest.raises(ConvergenceError) as info:
        load_fixed_point(sites, partition, density, 100.0, LinkModel(beta=2.0), tol=1e-15, max_iter=2)
    assert info.value.best is not None


def test_fixed_point_input_validation():
    sites, partition, density = two_cell_network()
    with pytest.raises(DomainError):
        load_fixed_point(sites[:1], partition, density, 100.0, LinkModel())
    with pytest.raises(DomainError):
        load_fixed_point(sites, partition, density[:1], 100.0, LinkModel())
    with pytest.raises(DomainError):
        load_fixed_point(sites, partition, density, 0.0, LinkModel())


def test_periodic_lattice_loads_are_uniform_and_match_the_cell_integral():
    lattice = place_lattice(RECT, 100, "hexagonal", fit="native")
    link = LinkModel(beta=3.5)
    partition = lattice.cell_partition(24)
    density = np.full(partition.points.size, 1.0 / lattice.rectangle.area)
    result = load_fixed_point(lattice.sites, partition, density, VOLUME, link, torus=lattice.torus, tol=1e-12)
    assert np.ptp(result.loads) < 1e-6
    alpha = canonical_uniform_load(lattice, VOLUME, link, resolution=24)
    assert result.loads.mean() == pytest.approx(alpha, abs=1e-8)
    assert 0.0 < alpha < 1.0


@pytest.mark.parametrize("tiling", ["hexagonal", "rectangular"])
@pytest.mark.parametrize("resolution", [22, 30])
def test_periodic_loads_equal_the_canonical_load_on_shared_samples(tiling, resolution):
    lattice = place_lattice(RECT, 100, tiling)
    link = LinkModel(beta=3.5)
    partition = lattice.cell_partition(resolution)
    density = np.full(partition.points.size, 1.0 / lattice.rectangle.area)
    result = load_fixed_point(lattice.sites, partition, density, VOLUME, link, torus=lattice.torus, tol=1e-12)
    alpha = canonical_uniform_load(lattice, VOLUME, link, resolution=resolution)
    assert np.ptp(result.loads) < 1e-10
    np.testing.assert_allclose(result.loads, alpha, atol=1e-8)


def test_canonical_load_converges_with_the_cell_grid():
    lattice = place_lattice(RECT, 100, "hexagonal", fit="native")
    link = LinkModel(beta=3.5)
    coarse = canonical_uniform_load(lattice, VOLUME, link, resolution=64)
    fine = canonical_uniform_load(lattice, VOLUME, link, resolution=128)
    assert coarse == pytest.approx(fine, rel=5e-3)


@pytest.fixture(scope="module")
def open_network():
    lattice = place_lattice(RECT, 100, "hexagonal")
    partition = lattice.cell_partition(20)
    density = np.full(partition.points.size, 1.0 / lattice.rectangle.area)
    return lattice, partition, density


def run_open(lattice, partition, density, link=LinkModel(beta=3.5)):
    return load_fixed_point(
        lattice.sites,
        partition,
        density,
        VOLUME,
        link,
        torus=lattice.torus,
        tol=1e-12,
        boundary=lattice.boundary_flags(),
        interference_wraps=False,
    )


def test_open_network_never_exceeds_the_periodic_load(open_network):
    lattice, partition, density = open_network
    link = LinkModel(beta=3.5)
    alpha = canonical_uniform_load(lattice, VOLUME, link, resolution=20)
    result = run_open(lattice, partition, density, link)
    assert result.loads.max() <= alpha + 1e-9
    assert result.boundary_mean() < result.interior_mean()


def test_more_demand_in_one_cell_raises_every_load(open_network):
    lattice, partition, density = open_network
    base = run_open(lattice, partition, density)
    busier = density.copy()
    busier[partition.labels == 45] *= 1.5
    raised = run_open(lattice, partition, busier)
    assert np.all(raised.loads >= base.loads - 1e-12)
    assert raised.loads[45] > base.loads[45]
    neighbours = np.argsort(torus_distance(lattice.sites, lattice.sites[45], *lattice.torus))[1:7]
    assert np.all(raised.loads[neighbours] > base.loads[neighbours])


def test_infeasible_volume_is_reported_with_the_demanded_load():
    lattice = place_lattice(RECT, 36, "hexagonal", fit="native")
    with pytest.raises(InfeasibleDemandError) as info:
        canonical_uniform_load(lattice, 1e6, LinkModel(), resolution=24)
    assert info.value.achieved > 1.0


def test_sweep_load_falls_with_cells_and_path_loss():
    rows = sweep_canonical(RECT, [100, 144, 196], [3.0, 3.5, 4.0], VOLUME, LinkModel(), resolution=40)
    assert len(rows) == 9
    table = {(r["beta"], r["cells"]): r["alpha_c"] for r in rows}
    assert all(v is not None for v in table.values())
    for beta in (3.0, 3.5, 4.0):
        assert table[(beta, 100)] > table[(beta, 144)] > table[(beta, 196)]
    for cells in (100, 144, 196):
        assert table[(3.0, cells)] > table[(3.5, cells)] > table[(4.0, cells)]


def test_dimensioning_finds_the_smallest_lattice_meeting_the_target():
    link = LinkModel(beta=3.5)
    plan = dimension_network(0.3, RECT, VOLUME, link, resolution=24, max_cells=600)
    assert plan.load <= 0.3
    assert plan.cells == plan.lattice.n_cells
    assert all(load > 0.3 for cells, load in plan.evaluated.items() if cells < plan.cells)
    assert canonical_uniform_load(plan.lattice, VOLUME, link, resolution=24) == pytest.approx(plan.load)
    assert plan.estimate > 0


def test_dimensioning_fails_when_no_lattice_is_large_enough():
    with pytest.raises(InfeasibleDemandError):
        dimension_network(0.01, RECT, VOLUME, LinkModel(), resolution=16, max_cells=40)
    with pytest.raises(DomainError):
        dimension_network(1.5, RECT, VOLUME, LinkModel())


def test_cell_load():
    assert cell_load(0.5, 0.1, 10.0, 1.0) == (0.5, False)
    assert cell_load(0.5, 1.0, 10.0, 1.0) == (1.0, True)
    loads, clamped = cell_load(np.array([0.1, 0.9]), np.array([1.0, 1.0]), 2.0, 1.0)
    np.testing.assert_allclose(loads, [0.2, 1.0])
    np.testing.assert_array_equal(clamped, [False, True])
    with pytest.raises(DomainError):
        cell_load(1.5, 0.1, 10.0, 1.0)
    with pytest.raises(DomainError):
        cell_load(0.5, -0.1, 10.0, 1.0)


def test_correlation():
    a = np.array([0.1, 0.4, 0.3])
    assert correlation(a, a) == pytest.approx(1.0)
    assert correlation(a, -a) == pytest.approx(-1.0)
    assert correlation(np.full(3, 0.2), np.full(3, 0.2)) == 1.0
    assert correlation(np.full(3, 0.2), a) == 0.0
    assert correlation(np.full(5, 0.1) + np.array([0.0, 1e-17, 0.0, 2e-17, 0.0]), a[[0, 1, 2, 0, 1]]) == 0.0
    with pytest.raises(DomainError):
        correlation(a, a[:2])


def test_load_vector_csv_round_trip(tmp_path):
    vector = LoadVector(np.array([0.2, 0.5, 1.0]), np.array([False, False, True]), np.array([True, False, True]))
    loaded = LoadVector.load_csv(vector.save_csv(tmp_path / "loads.csv"), "physical")
    np.testing.assert_allclose(loaded.loads, vector.loads)
    np.testing.assert_array_equal(loaded.clamped, vector.clamped)
    np.testing.assert_array_equal(loaded.boundary, vector.boundary)
    assert loaded.label == "physical"
    with pytest.raises(ScenarioError):
        LoadVector.load_csv(tmp_path / "absent.csv")
    with pytest.raises(DomainError):
        LoadVector(np.array([1.5]), np.array([False]))


def test_compare_domains(tmp_path):
    periodic = LoadVector(np.full(3, 0.4), np.zeros(3, dtype=bool))
    nonperiodic = LoadVector(np.array([0.2, 0.3, 0.35]), np.zeros(3, dtype=bool), np.array([True, False, True]))
    physical = LoadVector(np.array([0.25, 0.32, 0.4]), np.zeros(3, dtype=bool), np.array([True, False, True]))
    result = compare_domains(periodic, nonperiodic, physical, 0.4, module=0.7, aspect=0.7)
    assert result.worst_case_holds
    assert result.module_match == 0.0
    assert result.correlation > 0.9
    data = json.loads(result.save_json(tmp_path / "result.json").read_text())
    assert data["max_nonperiodic_load"] == pytest.approx(0.35)
    assert data["boundary_mean"]["physical"] == pytest.approx(0.325)

    low = compare_domains(periodic, nonperiodic, physical, 0.3, module=0.7, aspect=0.77)
    assert not low.worst_case_holds
    assert low.module_match == pytest.approx(0.1)
