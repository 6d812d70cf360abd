"""Regular base-station lattices on the canonical torus and their link budget."""

import functools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from cellplan_mcp.errors import DomainError, PlacementError, SingularityError
from cellplan_mcp.geometry import CellPartition, RectangleDomain, nearest_site, torus_distance

logger = logging.getLogger("CellPlanMCP")

TILINGS = ("hexagonal", "rectangular")
FITS = ("exact", "stretch", "native")
HEX_ASPECT = 2.0 / np.sqrt(3.0)
GOLDEN_SHIFT = 0.5 * (np.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class LinkModel:
    """Path loss d**-beta, unit transmit power, Shannon-type link function."""

    beta: float = 3.5
    noise: float = 0.0
    bandwidth: float = 5e6
    min_rate: float = 1e5
    boundary_noise: float = 1.0

    def __post_init__(self) -> None:
        if not self.beta >= 2.0:
            raise DomainError(f"Path-loss exponent must be at least 2, got {self.beta}")
        if not (self.bandwidth > 0 and self.min_rate > 0):
            raise DomainError("Bandwidth and minimum rate must be positive")
        if not (self.noise >= 0 and self.boundary_noise >= 0):
            raise DomainError("Noise power and boundary multiplier must be nonnegative")

    @property
    def sir_mode(self) -> bool:
        return self.noise == 0.0

    @property
    def rate_ratio(self) -> float:
        return self.min_rate / self.bandwidth

    def gain(self, distance: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.asarray(distance, dtype=float) ** (-self.beta)

    def spectral_cost(self, sinr: np.ndarray) -> np.ndarray:
        """1 / log2(1 + sinr); zero where the SINR is infinite."""
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = 1.0 / np.log2(1.0 + np.asarray(sinr, dtype=float))
        return np.where(np.isinf(sinr), 0.0, cost)


@dataclass(frozen=True, eq=False)
class TorusLattice:
    """L_W x L_H base stations on the torus ``rectangle``.

    Hexagonal lattices have flat-topped cells in columns of L_H sites with every
    second column shifted by half a row; sites are ordered column by column.
    """

    rectangle: RectangleDomain
    target: RectangleDomain
    tiling: str
    columns: int
    rows: int
    radius: float
    fit: str
    stretch: Tuple[float, float] = (1.0, 1.0)

    @property
    def n_cells(self) -> int:
        return self.columns * self.rows

    @property
    def spacing(self) -> Tuple[float, float]:
        return self.rectangle.width / self.columns, self.rectangle.height / self.rows

    @property
    def offset(self) -> Tuple[float, float]:
        sw, sh = self.spacing
        if self.tiling == "hexagonal":
            return 0.5 * sw, 0.25 * sh
        return 0.5 * sw, 0.5 * sh

    @property
    def torus(self) -> Tuple[float, float]:
        return self.rectangle.width, self.rectangle.height

    @functools.cached_property
    def sites(self) -> np.ndarray:
        sw, sh = self.spacing
        dw, dh = self.offset
        col = np.repeat(np.arange(self.columns), self.rows)
        row = np.tile(np.arange(self.rows), self.columns)
        x = col * sw + dw
        y = row * sh + dh
        if self.tiling == "hexagonal":
            # every second column sits half a row higher
            y = y + (col % 2) * 0.5 * sh
        sites = x + 1j * y
        sites.setflags(write=False)
        return sites

    def boundary_flags(self) -> np.ndarray:
        """Sites whose lattice neighbours are only reached across the torus seam."""
        col = np.repeat(np.arange(self.columns), self.rows)
        row = np.tile(np.arange(self.rows), self.columns)
        return (col == 0) | (col == self.columns - 1) | (row == 0) | (row == self.rows - 1)

    def fundamental_domain(self, resolution: int = 64) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets filling one sw x sh lattice period around site 0, and weights.

        Hexagonal grids are shifted off the cell-centred position by the golden
        ratio so no sample lands on a Voronoi edge.
        """
        if resolution < 1:
            raise DomainError(f"Fundamental-domain resolution must be positive, got {resolution}")
        sw, sh = self.spacing
        shift = GOLDEN_SHIFT if self.tiling == "hexagonal" else 0.5
        u = sw * ((np.arange(resolution) + shift) / resolution - 0.5)
        v = sh * ((np.arange(resolution) + shift) / resolution - 0.5)
        offsets = (u[None, :] + 1j * v[:, None]).ravel()
        weights = np.full(offsets.size, sw * sh / offsets.size)
        return offsets, weights

    def fundamental_cell(self, resolution: int = 64) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets (relative to site 0) sampling its torus Voronoi cell, and weights.

        Samples of the lattice period that belong to a neighbour are carried
        back onto site 0 by the lattice translation between the two sites.
        """
        offsets, weights = self.fundamental_domain(resolution)
        w, h = self.torus
        owner = nearest_site(self.sites[0] + offsets, self.sites, self.torus)
        d = self.sites[owner] - self.sites[0]
        dx = np.remainder(d.real + 0.5 * w, w) - 0.5 * w
        dy = np.remainder(d.imag + 0.5 * h, h) - 0.5 * h
        return offsets - (dx + 1j * dy), weights

    def cell_partition(self, resolution: int = 64) -> CellPartition:
        """Exactly translation-symmetric partition: every cell gets site 0's samples."""
        offsets, weights = self.fundamental_cell(resolution)
        w, h = self.torus
        pts = (self.sites[:, None] + offsets[None, :]).ravel()
        pts = np.remainder(pts.real, w) + 1j * np.remainder(pts.imag, h)
        labels = np.repeat(np.arange(self.n_cells), offsets.size)
        return CellPartition(pts, labels, np.tile(weights, self.n_cells), self.n_cells, self.rectangle.area)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tiling": self.tiling,
            "fit": self.fit,
            "columns": self.columns,
            "rows": self.rows,
            "cells": self.n_cells,
            "radius": self.radius,
            "stretch": list(self.stretch),
            "torus": [self.rectangle.width, self.rectangle.height],
            "target": [self.target.width, self.target.height],
            "sites": [[float(s.real), float(s.imag)] for s in self.sites],
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def hex_radius(area: float, cells: int) -> float:
    """Circumradius of L regular hexagons tiling ``area``."""
    return float(np.sqrt(2.0 * area / (3.0 * np.sqrt(3.0) * cells)))


def _native_aspect(tiling: str, columns: int, rows: int) -> float:
    if tiling == "hexagonal":
        return HEX_ASPECT * rows / columns
    return rows / columns


def factorizations(cells: int, tiling: str) -> List[Tuple[int, int]]:
    pairs = [(c, cells // c) for c in range(1, cells + 1) if cells % c == 0]
    if tiling == "hexagonal":
        pairs = [(c, r) for c, r in pairs if c % 2 == 0]
    return pairs


def _nearest_feasible(cells: int, tiling: str) -> Optional[int]:
    for delta in range(1, cells + 2):
        for candidate in (cells - delta, cells + delta):
            if candidate >= 1 and factorizations(candidate, tiling):
                return candidate
    return None


def place_lattice(
    rect: RectangleDomain,
    cells: int,
    tiling: str = "hexagonal",
    fit: Optional[str] = None,
    shape: Optional[Tuple[int, int]] = None,
) -> TorusLattice:
    """Place L sites on ``rect`` following the regular-tiling site formulas.

    ``fit``: ``exact`` requires the tiling to match the rectangle exactly (always
    true for rectangular cells), ``stretch`` spaces the best factorization over
    the rectangle anisotropically, ``native`` keeps a regular tiling on an
    area-preserving torus of its own aspect.
    """
    if tiling not in TILINGS:
        raise DomainError(f"Unknown tiling '{tiling}'; choose from {TILINGS}")
    if int(cells) != cells or cells < 1:
        raise DomainError(f"Cell count must be a positive integer, got {cells}")
    cells = int(cells)
    fit = fit or ("stretch" if tiling == "hexagonal" else "exact")
    if fit not in FITS:
        raise DomainError(f"Unknown fit '{fit}'; choose from {FITS}")

    options = factorizations(cells, tiling)
    if shape is not None:
        shape = (int(shape[0]), int(shape[1]))
        if shape not in options:
            raise PlacementError(f"Lattice shape {shape} is not a feasible {tiling} factorization of {cells}")
        options = [shape]
    if not options:
        nearest = _nearest_feasible(cells, tiling)
        raise PlacementError(
            f"No {tiling} lattice with {cells} cells (columns must be even); nearest feasible L is {nearest}",
            nearest_feasible=nearest,
        )
    columns, rows = min(
        options, key=lambda cr: (abs(np.log(_native_aspect(tiling, *cr) / rect.aspect)), cr[0])
    )
    native = _native_aspect(tiling, columns, rows)

    if tiling == "hexagonal":
        radius = hex_radius(rect.area, cells)
        if fit == "exact" and abs(native / rect.aspect - 1.0) > 1e-9:
            raise PlacementError(
                f"A regular hexagonal {columns}x{rows} lattice has aspect {native:.6f}, "
                f"not {rect.aspect:.6f}; use fit='stretch' or fit='native'",
                nearest_feasible=_nearest_feasible(cells, tiling),
            )
        if fit == "native":
            torus = RectangleDomain(1.5 * radius * columns, np.sqrt(3.0) * radius * rows)
            stretch = (1.0, 1.0)
        else:
            torus = rect
            stretch = (rect.width / (1.5 * radius * columns), rect.height / (np.sqrt(3.0) * radius * rows))
    else:
        if fit == "native":
            side = np.sqrt(rect.area / cells)
            torus = RectangleDomain(side * columns, side * rows)
        else:
            torus = rect
        sw, sh = torus.width / columns, torus.height / rows
        radius = 0.5 * float(np.hypot(sw, sh))
        stretch = (1.0, 1.0) if fit == "native" else (sw / np.sqrt(rect.area / cells), sh / np.sqrt(rect.area / cells))

    lattice = TorusLattice(torus, rect, tiling, columns, rows, radius, fit, (float(stretch[0]), float(stretch[1])))
    logger.info(
        f"Placed {tiling} lattice {columns}x{rows} (L={cells}, fit={fit}, R={radius:.4f}, "
        f"stretch={stretch[0]:.3f}x{stretch[1]:.3f})"
    )
    return lattice


def dimensioning_ladder(rect: RectangleDomain, tiling: str = "hexagonal", max_cells: int = 2000) -> List[Tuple[int, int]]:
    """Increasing sequence of (columns, rows) whose shape follows the rectangle aspect."""
    if tiling not in TILINGS:
        raise DomainError(f"Unknown tiling '{tiling}'; choose from {TILINGS}")
    ladder: List[Tuple[int, int]] = []
    step = 2 if tiling == "hexagonal" else 1
    columns = step
    scale = rect.aspect / (HEX_ASPECT if tiling == "hexagonal" else 1.0)
    while True:
        rows = max(1, int(round(columns * scale)))
        if columns * rows > max_cells:
            break
        if not ladder or columns * rows > ladder[-1][0] * ladder[-1][1]:
            ladder.append((columns, rows))
        columns += step
    return ladder


def pairwise_distance(
    points: np.ndarray, sites: np.ndarray, torus: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    points = np.asarray(points, dtype=complex)
    sites = np.asarray(sites, dtype=complex)
    if torus is None:
        return np.abs(points[..., None] - sites)
    return torus_distance(points[..., None], sites, *torus)


def total_received_power(
    r: Union[complex, np.ndarray], lattice: TorusLattice, link: LinkModel
) -> Union[float, np.ndarray]:
    """P_T(r): sum over all sites of d_p(r, s)**-beta."""
    pts = np.asarray(r, dtype=complex)
    d = pairwise_distance(pts, lattice.sites, lattice.torus)
    if np.any(d < 1e-12 * lattice.rectangle.diameter):
        raise SingularityError("Received power requested at a base-station site")
    total = link.gain(d).sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def sinr_at(
    r: Union[complex, np.ndarray], lattice: TorusLattice, link: LinkModel, alpha_c: float
) -> Union[float, np.ndarray]:
    """SINR at r with every other cell loaded at alpha_c."""
    if not 0.0 < alpha_c <= 1.0:
        raise DomainError(f"Load must lie in (0, 1], got {alpha_c}")
    pts = np.asarray(r, dtype=complex)
    d = pairwise_distance(pts, lattice.sites, lattice.torus)
    if np.any(d < 1e-12 * lattice.rectangle.diameter):
        raise SingularityError("SINR requested at a base-station site")
    gains = link.gain(d)
    serving = gains.max(axis=-1)
    interference = gains.sum(axis=-1) - serving
    with np.errstate(divide="ignore"):
        sinr = serving / (alpha_c * interference + link.noise)
    return float(sinr) if sinr.ndim == 0 else sinr
