"""Shared fixtures: test quadrilaterals and their solved conformal maps."""

from pathlib import Path

import numpy as np
import pytest

from cellplan_mcp.geometry import Polygon, Quadrilateral
from cellplan_mcp.scmap import ConformalMapPair, solve_strip_parameters

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

L_SHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
A1_POLYGON = [(0, 0), (5, 0), (6.2, 2.5), (5.2, 5.4), (1.4, 5.8), (-0.6, 3.0)]


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture(scope="session")
def unit_square() -> Quadrilateral:
    return Quadrilateral(Polygon.from_points([0, 1, 1 + 1j, 1j]), (0, 1, 2, 3))


@pytest.fixture(scope="session")
def l_shape() -> Quadrilateral:
    return Quadrilateral(Polygon.from_points(L_SHAPE), (0, 1, 4, 5))


@pytest.fixture(scope="session")
def a1_quad() -> Quadrilateral:
    return Quadrilateral(Polygon.from_points(A1_POLYGON), (0, 1, 3, 4))


@pytest.fixture(scope="session")
def square_map(unit_square) -> ConformalMapPair:
    return ConformalMapPair.build(solve_strip_parameters(unit_square))


@pytest.fixture(scope="session")
def l_shape_map(l_shape) -> ConformalMapPair:
    return ConformalMapPair.build(solve_strip_parameters(l_shape))


@pytest.fixture(scope="session")
def a1_map(a1_quad) -> ConformalMapPair:
    return ConformalMapPair.build(solve_strip_parameters(a1_quad))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
