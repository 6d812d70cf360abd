"""Cell loads under mutual interference: fixed points, dimensioning, comparison."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cellplan_mcp.canonical import (
    LinkModel,
    TorusLattice,
    dimensioning_ladder,
    pairwise_distance,
    place_lattice,
)
from cellplan_mcp.errors import ConvergenceError, DomainError, InfeasibleDemandError, ScenarioError
from cellplan_mcp.geometry import CellPartition, RectangleDomain, torus_distance

logger = logging.getLogger("CellPlanMCP")

POWER_CACHE_LIMIT = 20_000_000
BRACKET = (1e-6, 1.0)
BISECTION_STEPS = 60
CONSTANT_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class LoadVector:
    """Per-cell loads in [0, 1] with clamping and boundary flags."""

    loads: np.ndarray
    clamped: np.ndarray
    boundary: Optional[np.ndarray] = None
    iterations: int = 0
    residual: float = 0.0
    label: str = ""

    def __post_init__(self) -> None:
        if np.any(self.loads < 0) or np.any(self.loads > 1) or not np.all(np.isfinite(self.loads)):
            raise DomainError("Loads must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.loads.size

    def boundary_mean(self) -> Optional[float]:
        if self.boundary is None or not np.any(self.boundary):
            return None
        return float(self.loads[self.boundary].mean())

    def interior_mean(self) -> Optional[float]:
        if self.boundary is None or np.all(self.boundary):
            return None
        return float(self.loads[~self.boundary].mean())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "loads": [float(a) for a in self.loads],
            "clamped": [bool(c) for c in self.clamped],
            "boundary": None if self.boundary is None else [bool(b) for b in self.boundary],
            "iterations": self.iterations,
            "residual": self.residual,
        }

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        boundary = self.boundary if self.boundary is not None else np.zeros(self.size, dtype=bool)
        rows = ["cell,load,clamped,boundary"]
        for l, (a, c, b) in enumerate(zip(self.loads, self.clamped, boundary)):
            rows.append(f"{l},{a:.12g},{int(c)},{int(b)}")
        path.write_text("\n".join(rows) + "\n")
        return path

    @classmethod
    def load_csv(cls, path: Union[str, Path], label: str = "") -> "LoadVector":
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as e:
            raise ScenarioError(f"Cannot read load vector {path}: {e}")
        if data.shape[1] != 4:
            raise ScenarioError(f"Load vector {path} must have cell,load,clamped,boundary columns")
        order = np.argsort(data[:, 0])
        data = data[order]
        return cls(data[:, 1], data[:, 2].astype(bool), data[:, 3].astype(bool), label=label)


def cell_load(
    share: Union[float, np.ndarray],
    mean_bandwidth: Union[float, np.ndarray],
    volume: float,
    bandwidth: float,
) -> Tuple[Union[float, np.ndarray], Union[bool, np.ndarray]]:
    """min(1, V_l * b_l / B_sys) with V_l = share * V; second value flags clamping."""
    share = np.asarray(share, dtype=float)
    mean_bandwidth = np.asarray(mean_bandwidth, dtype=float)
    if np.any(share < -1e-12) or np.any(share > 1.0 + 1e-9):
        raise DomainError("Demand share must lie in [0, 1]")
    if np.any(mean_bandwidth < 0) or not np.all(np.isfinite(mean_bandwidth)):
        raise DomainError("Mean user bandwidth must be finite and nonnegative")
    if not (volume > 0 and bandwidth > 0):
        raise DomainError("Demand volume and system bandwidth must be positive")
    raw = np.clip(share, 0.0, None) * volume * mean_bandwidth / bandwidth
    clamped = raw > 1.0
    load = np.minimum(raw, 1.0)
    if load.ndim == 0:
        return float(load), bool(clamped)
    return load, clamped


class _Coupling:
    """Serving gain and interference operator of one sampled network.

    With a ``torus`` each sample is served across the seam; when
    ``interference_wraps`` is off, interference is measured in the plane from
    the sample's position next to its own site.
    """

    def __init__(
        self,
        sites: np.ndarray,
        partition: CellPartition,
        link: LinkModel,
        torus: Optional[Tuple[float, float]],
        interference_wraps: bool = True,
    ):
        self.sites = np.asarray(sites, dtype=complex)
        self.partition = partition
        self.link = link
        self.points = partition.points
        self.metric = torus
        own = self.sites[partition.labels]
        if torus is None:
            serving_distance = np.abs(partition.points - own)
        else:
            serving_distance = torus_distance(partition.points, own, *torus)
            if not interference_wraps:
                w, h = torus
                d = partition.points - own
                dx = np.remainder(d.real + 0.5 * w, w) - 0.5 * w
                dy = np.remainder(d.imag + 0.5 * h, h) - 0.5 * h
                self.points = own + (dx + 1j * dy)
                self.metric = None
        self.serving = link.gain(serving_distance)
        self.gains: Optional[np.ndarray] = None
        if partition.points.size * self.sites.size <= POWER_CACHE_LIMIT:
            self.gains = self._gain_block(0, partition.points.size)

    def _gain_block(self, start: int, stop: int) -> np.ndarray:
        pts = self.points[start:stop]
        gains = self.link.gain(pairwise_distance(pts, self.sites, self.metric))
        gains[np.arange(stop - start), self.partition.labels[start:stop]] = 0.0
        return gains

    def interference(self, alpha: np.ndarray) -> np.ndarray:
        if self.gains is not None:
            return self.gains @ alpha
        out = np.empty(self.partition.points.size)
        step = max(1, POWER_CACHE_LIMIT // (4 * self.sites.size))
        for start in range(0, out.size, step):
            stop = min(out.size, start + step)
            out[start:stop] = self._gain_block(start, stop) @ alpha
        return out


def load_fixed_point(
    sites: np.ndarray,
    partition: CellPartition,
    density: np.ndarray,
    volume: float,
    link: LinkModel,
    torus: Optional[Tuple[float, float]] = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
    boundary: Optional[np.ndarray] = None,
    label: str = "",
    interference_wraps: bool = True,
) -> LoadVector:
    """Jacobi iteration alpha <- min(1, V_l b_l(alpha) / B_sys) from full load.

    ``density`` holds delta at each partition sample; ``torus`` switches the
    distance to the wrap-around metric; ``boundary`` flags cells whose noise is
    scaled by ``link.boundary_noise``. ``interference_wraps=False`` keeps the
    torus cells but stops interference at the rectangle edges.
    """
    sites = np.asarray(sites, dtype=complex).ravel()
    density = np.asarray(density, dtype=float).ravel()
    if sites.size != partition.n_cells:
        raise DomainError("Partition and site list disagree on the number of cells")
    if density.shape != partition.points.shape:
        raise DomainError("Density must have one value per partition sample")
    if not volume > 0:
        raise DomainError("Demand volume must be positive")
    mass = partition.weights * density
    share = np.bincount(partition.labels, weights=mass, minlength=sites.size)
    coupling = _Coupling(sites, partition, link, torus, interference_wraps)
    noise = np.full(sites.size, link.noise)
    if boundary is not None:
        noise = np.where(boundary, link.noise * link.boundary_noise, noise)
    sample_noise = noise[partition.labels]

    alpha = np.ones(sites.size)
    clamped = np.zeros(sites.size, dtype=bool)
    change = np.inf
    for iteration in range(1, max_iter + 1):
        with np.errstate(divide="ignore"):
            sinr = coupling.serving / (coupling.interference(alpha) + sample_noise)
        weighted = np.bincount(partition.labels, weights=mass * link.spectral_cost(sinr), minlength=sites.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_bandwidth = np.where(share > 0, link.min_rate * weighted / share, 0.0)
        updated, clamped = cell_load(share, mean_bandwidth, volume, link.bandwidth)
        change = float(np.max(np.abs(updated - alpha)))
        alpha = updated
        logger.debug(f"load iteration {iteration}: max change {change:.3e}")
        if change <= tol:
            if np.any(clamped):
                logger.warning(f"{int(np.count_nonzero(clamped))} cells are overloaded and clamped at 1")
            return LoadVector(alpha, clamped, boundary, iteration, change, label)
    raise ConvergenceError("Load fixed point did not converge", best=alpha, residual=change, iterations=max_iter)


def _cell_costs(lattice: TorusLattice, link: LinkModel, resolution: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    offsets, weights = lattice.fundamental_cell(resolution)
    pts = lattice.sites[0] + offsets
    gains = link.gain(pairwise_distance(pts, lattice.sites, lattice.torus))
    rows = np.arange(pts.size)
    best = gains.argmax(axis=1)
    serving = gains[rows, best]
    gains[rows, best] = 0.0
    return serving, gains.sum(axis=1), weights


def canonical_uniform_load(
    lattice: TorusLattice,
    volume: float,
    link: LinkModel,
    tol: float = 1e-12,
    resolution: int = 128,
) -> float:
    """Common load of every cell of a periodic lattice under uniform demand.

    Solves alpha = (r_min / B) * V / |R| * integral over one cell of
    1 / log2(1 + gamma(r; alpha)) by bisection on (1e-6, 1].
    """
    if not volume > 0:
        raise DomainError("Demand volume must be positive")
    serving, interference, weights = _cell_costs(lattice, link, resolution)
    scale = link.rate_ratio * volume / lattice.rectangle.area

    def demand(alpha: float) -> float:
        with np.errstate(divide="ignore"):
            sinr = serving / (alpha * interference + link.noise)
        return scale * float(np.sum(weights * link.spectral_cost(sinr)))

    lo, hi = BRACKET
    if hi - demand(hi) < 0:
        raise InfeasibleDemandError(
            f"Demand exceeds capacity: a fully loaded network needs load {demand(hi):.4f} > 1",
            achieved=demand(hi),
        )
    if lo - demand(lo) >= 0:
        alpha = lo
        for _ in range(200):
            alpha = demand(alpha)
        return float(alpha)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid - demand(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def cells_required(
    target: float, lattice: TorusLattice, volume: float, link: LinkModel, resolution: int = 128
) -> int:
    """Ceiling estimate of L from the cell integral of a reference lattice at load ``target``.

    The SINR pattern of a regular lattice is scale free, so one reference lattice
    serves every L.
    """
    serving, interference, weights = _cell_costs(lattice, link, resolution)
    with np.errstate(divide="ignore"):
        sinr = serving / (target * interference + link.noise)
    mean_cost = float(np.sum(weights * link.spectral_cost(sinr)) / np.sum(weights))
    return int(np.ceil(link.rate_ratio * volume * mean_cost / target))


@dataclass(frozen=True, eq=False)
class Dimensioning:
    lattice: TorusLattice
    load: float
    estimate: int
    evaluated: Dict[int, float] = field(default_factory=dict)

    @property
    def cells(self) -> int:
        return self.lattice.n_cells


def dimension_network(
    target: float,
    rect: RectangleDomain,
    volume: float,
    link: LinkModel,
    tiling: str = "hexagonal",
    resolution: int = 128,
    max_cells: int = 2000,
) -> Dimensioning:
    """Smallest feasible lattice whose periodic load does not exceed ``target``."""
    if not 0.0 < target <= 1.0:
        raise DomainError(f"Target load must lie in (0, 1], got {target}")
    ladder = dimensioning_ladder(rect, tiling, max_cells)
    if not ladder:
        raise InfeasibleDemandError(f"No {tiling} lattice fits within {max_cells} cells")
    evaluated: Dict[int, float] = {}

    def load_at(i: int) -> Tuple[TorusLattice, float]:
        lattice = place_lattice(rect, ladder[i][0] * ladder[i][1], tiling, fit="native", shape=ladder[i])
        try:
            load = canonical_uniform_load(lattice, volume, link, resolution=resolution)
        except InfeasibleDemandError:
            load = np.inf
        evaluated[lattice.n_cells] = load
        return lattice, load

    best, best_load = load_at(len(ladder) - 1)
    if best_load > target:
        raise InfeasibleDemandError(
            f"No lattice with at most {max_cells} cells meets load {target}", achieved=best_load
        )
    lo, hi = -1, len(ladder) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lattice, load = load_at(mid)
        if load <= target:
            hi, best, best_load = mid, lattice, load
        else:
            lo = mid
    estimate = cells_required(target, best, volume, link, resolution)
    logger.info(f"Dimensioned {tiling} network: L={best.n_cells} at load {best_load:.4f} (estimate {estimate})")
    return Dimensioning(best, best_load, estimate, evaluated)


def sweep_canonical(
    rect: RectangleDomain,
    cells: Sequence[int],
    betas: Sequence[float],
    volume: float,
    link: LinkModel,
    tiling: str = "hexagonal",
    resolution: int = 128,
) -> List[Dict[str, Any]]:
    """alpha_c for every (L, beta) pair on regular native-fit lattices."""
    rows = []
    for beta in betas:
        model = LinkModel(beta, link.noise, link.bandwidth, link.min_rate, link.boundary_noise)
        for count in cells:
            lattice = place_lattice(rect, count, tiling, fit="native")
            try:
                alpha = canonical_uniform_load(lattice, volume, model, resolution=resolution)
            except InfeasibleDemandError as e:
                logger.warning(f"L={count}, beta={beta}: {e}")
                alpha = None
            rows.append({"cells": count, "beta": beta, "alpha_c": alpha, "radius": lattice.radius})
    return rows


def _is_constant(values: np.ndarray) -> bool:
    return values.size == 0 or float(np.ptp(values)) <= CONSTANT_TOLERANCE * max(1.0, float(np.max(np.abs(values))))


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; constant vectors correlate 1 if equal and 0 otherwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError("Load vectors must have the same length")
    if _is_constant(a) or _is_constant(b):
        return 1.0 if np.allclose(a, b) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    canonical_periodic: LoadVector
    canonical_nonperiodic: LoadVector
    physical: LoadVector
    alpha_c: float
    correlation: float
    module_match: float
    worst_case_holds: bool
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_c": self.alpha_c,
            "correlation": self.correlation,
            "module_match": self.module_match,
            "worst_case_holds": self.worst_case_holds,
            "max_nonperiodic_load": float(self.canonical_nonperiodic.loads.max()),
            "boundary_mean": {
                "canonical": self.canonical_nonperiodic.boundary_mean(),
                "physical": self.physical.boundary_mean(),
            },
            "interior_mean": {
                "canonical": self.canonical_nonperiodic.interior_mean(),
                "physical": self.physical.interior_mean(),
            },
            "loads": {
                "canonical_periodic": self.canonical_periodic.to_dict(),
                "canonical_nonperiodic": self.canonical_nonperiodic.to_dict(),
                "physical": self.physical.to_dict(),
            },
            "warnings": list(self.warnings),
        }

    def save_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def compare_domains(
    periodic: LoadVector,
    nonperiodic: LoadVector,
    physical: LoadVector,
    alpha_c: float,
    module: float,
    aspect: float,
    warnings: Sequence[str] = (),
) -> ScenarioResult:
    """Correlate canonical and physical load patterns and check the periodic bound."""
    rho = correlation(nonperiodic.loads, physical.loads)
    match = abs(aspect - module) / module
    holds = bool(alpha_c >= nonperiodic.loads.max() - 1e-9)
    if not holds:
        logger.warning(f"Periodic load {alpha_c:.4f} is below the peak non-periodic load {nonperiodic.loads.max():.4f}")
    logger.info(f"Load correlation canonical/physical: {rho:.4f}, module mismatch {match:.3e}")
    return ScenarioResult(periodic, nonperiodic, physical, alpha_c, rho, match, holds, tuple(warnings))
