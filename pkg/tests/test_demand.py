import numpy as np
import pytest

from cellplan_mcp.demand import (
    PRESETS,
    CanonicalDemand,
    DemandField,
    Disc,
    demand_cdf,
    induced_density,
    literal_divergence_density,
    load_demand_field,
    load_density_csv,
    normalisation_constant,
    patch_conservation_check,
    pushforward_check,
    random_discs,
    sample_from_density,
    target_density,
    total_variation,
)
from cellplan_mcp.errors import DomainError, ScenarioError
from cellplan_mcp.geometry import polygon_grid


@pytest.fixture(scope="module")
def a1_field(a1_map):
    return induced_density(a1_map, 200, 120.0, 0.5)


def test_induced_density_on_the_square_is_uniform(square_map):
    field = induced_density(square_map, 100)
    assert field.mass() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(field.density, 1.0, atol=1e-5)
    assert normalisation_constant(square_map, field) == pytest.approx(1.0, abs=1e-5)


def test_induced_density_has_unit_mass_and_volume(a1_field):
    assert a1_field.mass() == pytest.approx(1.0, abs=1e-9)
    assert a1_field.volume == pytest.approx(240.0)
    assert np.all(a1_field.density >= 0)


def test_normalisation_constant_is_reciprocal_module(a1_map, a1_field):
    assert normalisation_constant(a1_map, a1_field) * a1_map.module == pytest.approx(1.0, rel=5e-2)


def test_demand_cdf_is_monotone_and_ends_at_one(a1_field):
    table = demand_cdf(a1_field, 50)
    assert table.shape == (50, 2)
    assert np.all(np.diff(table[:, 0]) >= 0)
    assert np.all(np.diff(table[:, 1]) >= 0)
    assert table[-1, 0] == pytest.approx(a1_field.probabilities().max())
    assert table[-1, 1] == 1.0
    with pytest.raises(DomainError):
        demand_cdf(a1_field, 1)


def test_mass_is_conserved_on_patches_of_the_square(square_map, rng):
    field = induced_density(square_map, 200)
    for disc in random_discs(square_map.polygon, 10, (0.03, 0.08), rng):
        physical, canonical = patch_conservation_check(square_map, field, disc)
        assert physical == pytest.approx(canonical, abs=1e-3)


def test_mass_is_conserved_on_patches_of_a1(a1_map, a1_field, rng):
    for disc in random_discs(a1_map.polygon, 10, (0.03, 0.08), rng):
        assert a1_map.polygon.boundary_distance(disc.center) > disc.radius
        physical, canonical = patch_conservation_check(a1_map, a1_field, disc)
        assert physical == pytest.approx(canonical, abs=1e-3)


def test_polygon_patch_covers_everything(square_map):
    field = induced_density(square_map, 60)
    physical, canonical = patch_conservation_check(square_map, field, square_map.polygon, 60)
    assert physical == pytest.approx(1.0)
    assert canonical == pytest.approx(1.0)


def test_induced_density_pushes_forward_to_uniform(square_map, a1_map, a1_field):
    assert pushforward_check(square_map, induced_density(square_map, 100), 20_000, 8, seed=3) > 0.01
    assert pushforward_check(a1_map, a1_field, 20_000, 8, seed=3) > 0.01


def test_samples_stay_within_half_a_step_of_the_grid(a1_field, rng):
    pts = sample_from_density(a1_field, 500, rng)
    grid = a1_field.grid
    assert pts.shape == (500,)
    assert np.all(pts.real >= grid.points.real.min() - 0.5 * grid.step.real)
    assert np.all(pts.real <= grid.points.real.max() + 0.5 * grid.step.real)
    assert np.all(pts.imag >= grid.points.imag.min() - 0.5 * grid.step.imag)
    assert np.all(pts.imag <= grid.points.imag.max() + 0.5 * grid.step.imag)


def test_total_variation(a1_field):
    assert total_variation(a1_field, a1_field.density) == 0.0
    uniform = np.full(a1_field.density.shape, 1.0 / a1_field.grid.weights.sum())
    tv = total_variation(a1_field, uniform)
    assert 0.0 < tv < 1.0
    with pytest.raises(DomainError):
        total_variation(a1_field, uniform[:-1])


def test_literal_divergence_reading_agrees_on_the_square(square_map):
    np.testing.assert_allclose(literal_divergence_density(square_map, 60), 1.0, atol=1e-5)


def test_canonical_demand():
    demand = CanonicalDemand(area=4.0, mean_session=120.0, mean_interarrival=0.05)
    assert demand.density == 0.25
    assert demand.volume == pytest.approx(2400.0)
    with pytest.raises(DomainError):
        CanonicalDemand(area=0.0, mean_session=1.0, mean_interarrival=1.0)


def test_demand_field_rejects_bad_densities(square_map):
    grid = polygon_grid(square_map.polygon, 10)
    with pytest.raises(DomainError):
        DemandField(grid, np.full(grid.size, 2.0), 1.0, 1.0)
    with pytest.raises(DomainError):
        DemandField(grid, np.where(np.arange(grid.size) == 0, -1.0, 1.0), 1.0, 1.0)
    with pytest.raises(DomainError):
        DemandField(grid, np.ones(grid.size), 0.0, 1.0)


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_presets_are_normalised(a1_map, preset):
    grid, density = target_density(a1_map.polygon, preset, 80)
    assert float(np.sum(density * grid.weights)) == pytest.approx(1.0, abs=1e-12)
    if preset == "uniform":
        np.testing.assert_allclose(density, 1.0 / a1_map.polygon.area)
    else:
        assert density.max() > 2.0 * density.min()


def test_unknown_preset_is_a_scenario_error(a1_map):
    with pytest.raises(ScenarioError):
        target_density(a1_map.polygon, "stadium", 50)


def test_demand_csv_round_trip(a1_map, tmp_path):
    field = induced_density(a1_map, 60, 120.0, 0.05)
    path, header = field.save_csv(tmp_path / "demand.csv")
    assert header.exists()
    loaded = load_demand_field(path, a1_map.polygon)
    assert loaded.volume == pytest.approx(2400.0)
    np.testing.assert_allclose(loaded.density, field.density, rtol=1e-9)


def test_unreadable_density_csv(tmp_path, square_map):
    grid = polygon_grid(square_map.polygon, 10)
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n0.5,0.5\n")
    with pytest.raises(ScenarioError):
        load_density_csv(bad, grid)
    with pytest.raises(ScenarioError):
        load_density_csv(tmp_path / "absent.csv", grid)
    with pytest.raises(ScenarioError):
        load_demand_field(tmp_path / "absent.csv", square_map.polygon)


def test_disc_membership():
    disc = Disc(1 + 1j, 0.5)
    np.testing.assert_array_equal(disc.contains(np.array([1 + 1j, 1.5 + 1j, 2 + 2j])), [True, True, False])
