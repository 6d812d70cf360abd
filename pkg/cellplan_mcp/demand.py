"""Demand densities on the physical polygon and the canonical rectangle."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from cellplan_mcp.errors import DomainError, ScenarioError
from cellplan_mcp.geometry import Polygon, SampleGrid, polygon_grid
from cellplan_mcp.scmap import ConformalMapPair, derivative_unchecked

logger = logging.getLogger("CellPlanMCP")


@dataclass(frozen=True, eq=False)
class DemandField:
    """Per-sample demand density delta over a polygon grid.

    ``density`` integrates to one against ``grid.weights``; ``volume`` is
    V = E{mu} / E{lambda}.
    """

    grid: SampleGrid
    density: np.ndarray
    mean_session: float
    mean_interarrival: float
    label: str = "demand"

    def __post_init__(self) -> None:
        if not (self.mean_session > 0 and self.mean_interarrival > 0):
            raise DomainError("Mean session size and inter-arrival time must be positive")
        if self.density.shape != self.grid.points.shape:
            raise DomainError("Density must have one value per grid sample")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise DomainError("Demand density must be finite and nonnegative")
        mass = self.mass()
        if abs(mass - 1.0) > 1e-9:
            raise DomainError(f"Demand density integrates to {mass:.12f}, expected 1")

    @property
    def volume(self) -> float:
        return self.mean_session / self.mean_interarrival

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def mass(self) -> float:
        return float(np.sum(self.density * self.grid.weights))

    def probabilities(self) -> np.ndarray:
        """Per-element probability delta * dA."""
        return self.density * self.grid.weights

    def with_traffic(self, mean_session: float, mean_interarrival: float) -> "DemandField":
        return DemandField(self.grid, self.density, mean_session, mean_interarrival, self.label)

    def save_csv(self, path: Union[str, Path]) -> Tuple[Path, Path]:
        """Write ``x,y,density`` rows plus a JSON header next to them."""
        path = Path(path)
        rows = ["x,y,density"]
        for z, d in zip(self.grid.points, self.density):
            rows.append(f"{z.real:.12g},{z.imag:.12g},{d:.12g}")
        path.write_text("\n".join(rows) + "\n")
        header = path.with_suffix(".json")
        header.write_text(
            json.dumps(
                {
                    "label": self.label,
                    "volume": self.volume,
                    "mean_session": self.mean_session,
                    "mean_interarrival": self.mean_interarrival,
                    "grid_shape": list(self.grid.shape),
                    "origin": [self.grid.origin.real, self.grid.origin.imag],
                    "step": [self.grid.step.real, self.grid.step.imag],
                    "samples": int(self.grid.size),
                },
                indent=2,
            )
        )
        return path, header


def normalised(grid: SampleGrid, values: np.ndarray) -> np.ndarray:
    values = np.where(np.isfinite(values), values, 0.0)
    mass = float(np.sum(values * grid.weights))
    if not mass > 0:
        raise DomainError("Density has no mass on the grid")
    return values / mass


def induced_density(
    cm: ConformalMapPair,
    resolution: int = 500,
    mean_session: float = 1.0,
    mean_interarrival: float = 1.0,
    interpolation: int = 160,
) -> DemandField:
    """delta(zeta) = K / |dF^-1/dw (F(zeta))|^2 on a polygon grid.

    K is fixed numerically so the grid integral is one; it equals
    1 / module up to discretisation error.
    """
    grid = polygon_grid(cm.polygon, resolution)
    w = cm.forward_interpolated(grid.points, interpolation)
    with np.errstate(all="ignore"):
        jacobian = np.abs(derivative_unchecked(w, cm)) ** 2
        raw = 1.0 / jacobian
    singular = ~np.isfinite(raw)
    if np.any(singular):
        logger.debug(f"{int(np.count_nonzero(singular))} samples sit on map singularities; density set to 0")
    density = normalised(grid, raw)
    return DemandField(grid, density, mean_session, mean_interarrival, "induced")


def normalisation_constant(cm: ConformalMapPair, field: DemandField, interpolation: int = 160) -> float:
    """K such that delta = K / |dF^-1/dw|^2 on the grid of ``field``."""
    w = cm.forward_interpolated(field.points, interpolation)
    with np.errstate(all="ignore"):
        raw = 1.0 / np.abs(derivative_unchecked(w, cm)) ** 2
    raw = np.where(np.isfinite(raw), raw, 0.0)
    return float(1.0 / np.sum(raw * field.grid.weights))


def literal_divergence_density(cm: ConformalMapPair, resolution: int = 500, interpolation: int = 160) -> np.ndarray:
    """Diagnostic: delta proportional to 1 / (2 Re dF^-1/dw).

    This is the density obtained by reading the volume-preservation condition
    as a divergence. It is not rotation invariant and may change sign, so it is
    only reported, never used for loads.
    """
    grid = polygon_grid(cm.polygon, resolution)
    w = cm.forward_interpolated(grid.points, interpolation)
    with np.errstate(all="ignore"):
        raw = 1.0 / (2.0 * derivative_unchecked(w, cm).real)
    raw = np.where(np.isfinite(raw), raw, 0.0)
    mass = float(np.sum(raw * grid.weights))
    return raw / mass if mass != 0 else raw


@dataclass(frozen=True)
class CanonicalDemand:
    """Uniform demand 1/|R| over the canonical rectangle."""

    area: float
    mean_session: float
    mean_interarrival: float

    def __post_init__(self) -> None:
        if not self.area > 0:
            raise DomainError("Canonical area must be positive")

    @property
    def density(self) -> float:
        return 1.0 / self.area

    @property
    def volume(self) -> float:
        return self.mean_session / self.mean_interarrival


def demand_cdf(field: DemandField, bins: int = 200) -> np.ndarray:
    """Empirical CDF of per-element probabilities as an (bins, 2) table.

    Column 0 is the probability value, column 1 the fraction of elements whose
    probability does not exceed it; the last row is always (max, 1).
    """
    if bins < 2:
        raise DomainError("At least two CDF bins are required")
    p = np.sort(field.probabilities())
    x = np.linspace(0.0, p[-1], bins)
    x[-1] = p[-1]
    fraction = np.searchsorted(p, x, side="right") / p.size
    return np.column_stack([x, fraction])


@dataclass(frozen=True)
class Disc:
    center: complex
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(points, dtype=complex) - self.center) <= self.radius


Patch = Union[Disc, Polygon]


def patch_conservation_check(
    cm: ConformalMapPair, field: DemandField, patch: Patch, canonical_resolution: int = 300
) -> Tuple[float, float]:
    """(physical mass of patch, canonical uniform mass of its preimage).

    The second term is the fraction of a cell-centred canonical grid whose images
    land in the patch.
    """
    physical = float(np.sum(field.probabilities()[patch.contains(field.points)]))
    _, images = cm.canonical_images(canonical_resolution)
    canonical = float(np.count_nonzero(patch.contains(images))) / images.size
    return physical, canonical


def random_discs(
    polygon: Polygon, count: int, radius_fraction: Tuple[float, float], rng: np.random.Generator
) -> List[Disc]:
    """Discs fully inside ``polygon`` with radii a fraction of its diameter."""
    xmin, ymin, xmax, ymax = polygon.bounds
    discs: List[Disc] = []
    for _ in range(count * 200):
        if len(discs) == count:
            break
        c = complex(rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
        r = rng.uniform(*radius_fraction) * polygon.diameter
        if polygon.contains(c) and polygon.boundary_distance(c) > r:
            discs.append(Disc(c, r))
    if len(discs) < count:
        raise DomainError("Could not place the requested number of patches inside the polygon")
    return discs


def sample_from_density(field: DemandField, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points from delta: pick elements by probability, jitter within them."""
    p = field.probabilities()
    idx = rng.choice(p.size, size=count, p=p / p.sum())
    step = field.grid.step
    jitter = (rng.random(count) - 0.5) * step.real + 1j * (rng.random(count) - 0.5) * step.imag
    return field.points[idx] + jitter


def pushforward_check(
    cm: ConformalMapPair, field: DemandField, count: int = 100_000, bins: int = 10, seed: int = 0
) -> float:
    """Chi-square p-value that F pushes delta onto a uniform rectangle density."""
    rng = np.random.default_rng(seed)
    pts = sample_from_density(field, count, rng)
    inside = cm.polygon.contains(pts)
    w = cm.forward_interpolated(pts[inside])
    hist, _, _ = np.histogram2d(
        w.real, w.imag, bins=bins, range=[[0.0, 1.0], [0.0, cm.module]]
    )
    return float(stats.chisquare(hist.ravel()).pvalue)


def total_variation(field: DemandField, target: np.ndarray) -> float:
    """1/2 * integral |delta - target| on the field's grid."""
    if target.shape != field.density.shape:
        raise DomainError("Target density must live on the same grid")
    return 0.5 * float(np.sum(np.abs(field.density - target) * field.grid.weights))


# Gaussian mixtures in polygon-normalised coordinates (0..1 over the bounding
# box); reconstructions of hotspot-style demand, not measured data.
PRESETS: Dict[str, Sequence[Tuple[float, float, float, float]]] = {
    "uniform": (),
    "hotspot-a1": ((0.35, 0.40, 0.12, 1.0), (0.70, 0.65, 0.18, 0.6)),
    "hotspot-a2": ((0.30, 0.30, 0.10, 1.0), (0.65, 0.35, 0.15, 0.7), (0.50, 0.75, 0.20, 0.5)),
}


def target_density(polygon: Polygon, preset: str, resolution: int = 500, floor: float = 0.15) -> Tuple[SampleGrid, np.ndarray]:
    """Evaluate a named preset on the polygon grid, normalised to unit mass."""
    if preset not in PRESETS:
        raise ScenarioError(f"Unknown demand preset '{preset}'; choose from {sorted(PRESETS)}")
    grid = polygon_grid(polygon, resolution)
    xmin, ymin, xmax, ymax = polygon.bounds
    u = (grid.points.real - xmin) / (xmax - xmin)
    v = (grid.points.imag - ymin) / (ymax - ymin)
    values = np.full(grid.size, floor if PRESETS[preset] else 1.0)
    for cx, cy, sigma, weight in PRESETS[preset]:
        values += weight * np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2.0 * sigma**2))
    return grid, normalised(grid, values)


def load_density_csv(path: Union[str, Path], grid: SampleGrid) -> np.ndarray:
    """Read an ``x,y,density`` CSV and resample it onto ``grid`` (nearest row)."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise ScenarioError(f"Cannot read density CSV {path}: {e}")
    if data.shape[1] != 3 or np.any(data[:, 2] < 0):
        raise ScenarioError(f"Density CSV {path} must have nonnegative x,y,density rows")
    _, idx = cKDTree(data[:, :2]).query(np.column_stack([grid.points.real, grid.points.imag]))
    return normalised(grid, data[idx, 2])


def load_demand_field(path: Union[str, Path], polygon: Polygon) -> DemandField:
    """Read a field written by :meth:`DemandField.save_csv`."""
    path = Path(path)
    try:
        header = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"Cannot read demand header for {path}: {e}")
    ny, nx = header["grid_shape"]
    grid = polygon_grid(polygon, (nx, ny))
    density = load_density_csv(path, grid)
    return DemandField(grid, density, header["mean_session"], header["mean_interarrival"], header.get("label", "demand"))
