import numpy as np
import pytest

from cellplan_mcp.errors import DomainError
from cellplan_mcp.geometry import (
    Polygon,
    Quadrilateral,
    RectangleDomain,
    nearest_site,
    polygon_area,
    polygon_grid,
    torus_distance,
    torus_grid,
    voronoi_in_polygon,
    voronoi_on_torus,
)

from conftest import L_SHAPE


def brute_torus_distance(a, b, w, h):
    shifts = np.array([dx * w + 1j * dy * h for dx in (-1, 0, 1) for dy in (-1, 0, 1)])
    return np.min(np.abs(a[:, None] - b[:, None] - shifts[None, :]), axis=1)


def test_polygon_records_angles_and_area():
    polygon = Polygon.from_points(L_SHAPE)
    assert polygon.n == 6
    assert polygon.area == pytest.approx(3.0)
    np.testing.assert_allclose(polygon.angles, [0.5, 0.5, 0.5, 1.5, 0.5, 0.5])
    np.testing.assert_allclose(polygon.side_lengths(), [2, 1, 1, 1, 1, 2])
    assert polygon.diameter == pytest.approx(np.sqrt(8.0))
    assert polygon.bounds == (0.0, 0.0, 2.0, 2.0)


@pytest.mark.parametrize(
    "points",
    [
        [(0, 0), (1, 0)],
        [(0, 0), (1, 0), (1, 0), (0, 1)],
        [(0, 0), (1, 1), (1, 0), (0, 1)],
        [(0, 0), (0, 1), (1, 1), (1, 0)],
        [(0, 0), (1, 0), (float("inf"), 1)],
    ],
    ids=["too-few", "repeated", "bowtie", "clockwise", "infinite"],
)
def test_invalid_polygons_are_rejected(points):
    with pytest.raises(DomainError):
        Polygon.from_points(points)


def test_polygon_accepts_complex_and_pair_input():
    a = Polygon.from_points([0, 2, 2 + 1j])
    b = Polygon.from_points([(0, 0), (2, 0), (2, 1)])
    np.testing.assert_array_equal(a.vertices, b.vertices)
    assert polygon_area([(0, 0), (2, 0), (2, 1)]) == pytest.approx(1.0)


def test_contains_is_boundary_inclusive():
    polygon = Polygon.from_points(L_SHAPE)
    inside = polygon.contains(np.array([0.5 + 0.5j, 1.5 + 1.5j, 2 + 0.5j, 1 + 1j]))
    np.testing.assert_array_equal(inside, [True, False, True, True])
    assert polygon.boundary_distance(0.5 + 0.5j) == pytest.approx(0.5)


def test_quadrilateral_arcs_and_lengths():
    quad = Quadrilateral(Polygon.from_points(L_SHAPE), (0, 1, 4, 5))
    assert quad.arcs() == [[], [2, 3], [], []]
    np.testing.assert_allclose(quad.arc_lengths(), [2, 3, 1, 2])
    np.testing.assert_allclose(quad.corner_points(), [0, 2, 1 + 2j, 2j])


def test_quadrilateral_rotation_inverts_module():
    quad = Quadrilateral(Polygon.from_points(L_SHAPE), (0, 1, 4, 5), module=2.0)
    turned = quad.rotated()
    assert turned.corners == (1, 4, 5, 0)
    assert turned.module == pytest.approx(0.5)


@pytest.mark.parametrize("corners", [(0, 1, 2), (0, 1, 1, 2), (0, 4, 1, 5), (0, 1, 2, 9)])
def test_bad_corner_lists_are_rejected(corners):
    with pytest.raises(DomainError):
        Quadrilateral(Polygon.from_points(L_SHAPE), corners)


def test_rectangle_domain():
    rect = RectangleDomain(4.0, 2.0)
    assert rect.area == 8.0
    assert rect.aspect == 0.5
    assert rect.as_quadrilateral().module == 0.5
    assert rect.as_polygon().area == pytest.approx(8.0)
    assert bool(rect.contains(4.0 + 1e-13j, tol=1e-12))
    assert not bool(rect.contains(4.1 + 1j))
    with pytest.raises(DomainError):
        RectangleDomain(0.0, 1.0)


def test_torus_distance_matches_image_brute_force(rng):
    w, h = 3.7, 2.2
    a = rng.uniform(0, w, 10_000) + 1j * rng.uniform(0, h, 10_000)
    b = rng.uniform(0, w, 10_000) + 1j * rng.uniform(0, h, 10_000)
    np.testing.assert_allclose(torus_distance(a, b, w, h), brute_torus_distance(a, b, w, h), rtol=0, atol=1e-12)


def test_torus_distance_is_a_metric(rng):
    w, h = 1.0, 2.5
    a, b, c = (rng.uniform(0, w, 10_000) + 1j * rng.uniform(0, h, 10_000) for _ in range(3))
    ab, bc, ac = torus_distance(a, b, w, h), torus_distance(b, c, w, h), torus_distance(a, c, w, h)
    assert np.all(ac <= ab + bc + 1e-12)
    np.testing.assert_allclose(ab, torus_distance(b, a, w, h), atol=1e-15)
    assert torus_distance(0.1 + 0.1j, 0.1 + 0.1j, w, h) == 0.0
    with pytest.raises(DomainError):
        torus_distance(0, 1, 0.0, 1.0)


def test_nearest_site_breaks_ties_towards_lower_index():
    sites = np.array([0.75 + 0.5j, 0.25 + 0.5j])
    assert nearest_site(np.array([0.5 + 0.5j]), sites)[0] == 0
    assert nearest_site(np.array([0.0 + 0.5j]), sites, torus=(1.0, 1.0))[0] == 0
    assert nearest_site(np.array([0.3 + 0.5j]), sites)[0] == 1


def test_torus_voronoi_cells_of_a_regular_grid_have_equal_area():
    sites = np.array([0.5 + 0.5j, 1.5 + 0.5j, 0.5 + 1.5j, 1.5 + 1.5j])
    partition = voronoi_on_torus(sites, 2.0, 2.0, resolution=100)
    np.testing.assert_allclose(partition.areas(), 1.0, atol=1e-12)
    assert partition.empty_cells().size == 0


def test_torus_voronoi_rejects_sites_outside_the_fundamental_domain():
    with pytest.raises(DomainError):
        voronoi_on_torus(np.array([2.5 + 0.5j]), 2.0, 2.0, resolution=10)


def test_coincident_sites_are_rejected():
    with pytest.raises(DomainError, match="Coincident"):
        voronoi_on_torus(np.array([0.5 + 0.5j, 1.5 + 0.5j, 0.5 + 0.5j]), 2.0, 2.0, resolution=10)
    with pytest.raises(DomainError, match="Coincident"):
        voronoi_in_polygon(np.array([0.5 + 0.5j, 0.5 + 0.5j]), Polygon.from_points(L_SHAPE), resolution=10)


def test_sites_coinciding_across_the_torus_seam_are_rejected():
    # 0 and just below the width are the same point under the wrap-around distance
    seam = np.array([0.0 + 0.5j, 2.0 * (1.0 - 1e-15) + 0.5j])
    with pytest.raises(DomainError, match="Coincident"):
        voronoi_on_torus(seam, 2.0, 2.0, resolution=10)
    partition = voronoi_in_polygon(np.array([0.25 + 0.5j, 1.75 + 0.5j]), Polygon.from_points(L_SHAPE), resolution=40)
    assert partition.empty_cells().size == 0


def test_polygon_partition_weights_sum_to_exact_area():
    polygon = Polygon.from_points(L_SHAPE)
    sites = np.array([0.5 + 0.5j, 1.5 + 0.5j, 0.5 + 1.5j])
    partition = voronoi_in_polygon(sites, polygon, resolution=90)
    assert partition.areas().sum() == pytest.approx(3.0, abs=1e-12)
    np.testing.assert_allclose(partition.areas(), 1.0, atol=0.05)
    uniform = np.full(partition.points.size, 1.0 / 3.0)
    assert partition.shares(uniform).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(polygon.contains(partition.cell_points(2)))


def test_polygon_partition_rejects_outside_sites():
    with pytest.raises(DomainError):
        voronoi_in_polygon(np.array([1.5 + 1.5j]), Polygon.from_points(L_SHAPE), resolution=20)


def test_grids_scatter_back_to_images():
    grid = polygon_grid(Polygon.from_points(L_SHAPE), (40, 40))
    assert grid.shape == (40, 40)
    assert grid.size == 1200
    image = grid.to_image(np.ones(grid.size))
    assert np.count_nonzero(np.isnan(image)) == 400
    full = torus_grid(2.0, 1.0, (20, 10))
    assert full.weights.sum() == pytest.approx(2.0)
    assert full.step == pytest.approx(0.1 + 0.1j)
