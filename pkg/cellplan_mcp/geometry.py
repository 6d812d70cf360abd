"""Planar domains, torus distances and grid-sampled Voronoi partitions.

Points are complex numbers throughout: the real part is the first (w or x)
coordinate, the imaginary part the second (h or y).
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon as ShapelyPolygon

from cellplan_mcp.errors import DomainError

logger = logging.getLogger("CellPlanMCP")

Resolution = Union[int, Tuple[int, int]]
TIE_TOLERANCE = 1e-12
COINCIDENT_TOLERANCE = 1e-12


def as_points(values: Union[complex, Sequence, np.ndarray]) -> np.ndarray:
    """Coerce complex scalars/arrays or (x, y) pairs into a complex array."""
    arr = np.asarray(values)
    if np.iscomplexobj(arr):
        return arr.astype(complex)
    arr = arr.astype(float)
    if arr.ndim >= 1 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    return arr.astype(complex)


def _interior_angle_fractions(vertices: np.ndarray) -> np.ndarray:
    incoming = vertices - np.roll(vertices, 1)
    outgoing = np.roll(vertices, -1) - vertices
    turning = np.angle(outgoing / incoming)
    return 1.0 - turning / np.pi


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with vertices in counter-clockwise order."""

    vertices: np.ndarray
    angles: np.ndarray
    shape: ShapelyPolygon = field(repr=False)

    @classmethod
    def from_points(cls, points: Union[Sequence, np.ndarray]) -> "Polygon":
        vertices = as_points(points).ravel()
        n = vertices.size
        if n < 3:
            raise DomainError(f"A polygon needs at least 3 vertices, got {n}")
        if not np.all(np.isfinite(vertices)):
            raise DomainError("Polygon vertices must be finite")
        if np.any(np.abs(np.roll(vertices, -1) - vertices) == 0.0):
            raise DomainError("Polygon has repeated consecutive vertices")
        shape = ShapelyPolygon(np.column_stack([vertices.real, vertices.imag]))
        if not shape.is_valid:
            raise DomainError(f"Polygon is not simple: {shapely.is_valid_reason(shape)}")
        signed = _signed_area(vertices)
        if signed <= 0.0:
            raise DomainError("Polygon vertices must be ordered counter-clockwise")
        angles = _interior_angle_fractions(vertices)
        if np.any(angles <= 0.0) or np.any(angles >= 2.0):
            raise DomainError("Polygon has a degenerate (zero or full) interior angle")
        if abs(np.sum(1.0 - angles) - 2.0) > 1e-9:
            raise DomainError("Interior angles do not sum to a simple polygon's total")
        shapely.prepare(shape)
        vertices.setflags(write=False)
        angles.setflags(write=False)
        return cls(vertices=vertices, angles=angles, shape=shape)

    @property
    def n(self) -> int:
        return self.vertices.size

    @property
    def area(self) -> float:
        return polygon_area(self)

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.abs(v[:, None] - v[None, :])))

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        v = self.vertices
        return float(v.real.min()), float(v.imag.min()), float(v.real.max()), float(v.imag.max())

    def side_lengths(self) -> np.ndarray:
        return np.abs(np.roll(self.vertices, -1) - self.vertices)

    def contains(self, points: Union[complex, np.ndarray]) -> np.ndarray:
        """Boundary-inclusive, vectorised point membership."""
        pts = np.asarray(points, dtype=complex)
        return shapely.intersects_xy(self.shape, pts.real, pts.imag)

    def boundary_distance(self, points: Union[complex, np.ndarray]) -> np.ndarray:
        pts = np.asarray(points, dtype=complex)
        return shapely.distance(self.shape.exterior, shapely.points(pts.real, pts.imag))

    def to_list(self) -> List[List[float]]:
        return [[float(z.real), float(z.imag)] for z in self.vertices]


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices.real, vertices.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(polygon: Union[Polygon, Sequence, np.ndarray]) -> float:
    """Shoelace area of a polygon given as Polygon or vertex sequence."""
    vertices = polygon.vertices if isinstance(polygon, Polygon) else as_points(polygon).ravel()
    if vertices.size < 3:
        raise DomainError("Area requires at least 3 vertices")
    area = abs(_signed_area(vertices))
    if area <= 1e-300:
        raise DomainError("Polygon is degenerate (zero area)")
    return area


@dataclass(frozen=True, eq=False)
class Quadrilateral:
    """A polygon with four distinguished boundary vertices (corners).

    Corners are listed in counter-clockwise order; the canonical rectangle sends
    them to 0, 1, 1 + i*m and i*m.
    """

    polygon: Polygon
    corners: Tuple[int, int, int, int]
    module: Optional[float] = None

    def __post_init__(self) -> None:
        n = self.polygon.n
        corners = tuple(int(c) for c in self.corners)
        if len(corners) != 4 or len(set(corners)) != 4:
            raise DomainError(f"Exactly four distinct corners are required, got {self.corners}")
        if any(c < 0 or c >= n for c in corners):
            raise DomainError(f"Corner indices must lie in [0, {n}), got {corners}")
        offsets = [(c - corners[0]) % n for c in corners]
        if offsets != sorted(offsets):
            raise DomainError(f"Corners must be in counter-clockwise order, got {corners}")
        if self.module is not None and not self.module > 0:
            raise DomainError(f"Conformal module must be positive, got {self.module}")
        object.__setattr__(self, "corners", corners)

    def arcs(self) -> List[List[int]]:
        """Vertex indices strictly between consecutive corners (c0->c1, ..., c3->c0)."""
        n = self.polygon.n
        arcs = []
        for i in range(4):
            start, stop = self.corners[i], self.corners[(i + 1) % 4]
            gap = (stop - start) % n
            arcs.append([(start + j) % n for j in range(1, gap)])
        return arcs

    def arc_lengths(self) -> np.ndarray:
        sides = self.polygon.side_lengths()
        n = self.polygon.n
        lengths = []
        for i in range(4):
            start, stop = self.corners[i], self.corners[(i + 1) % 4]
            gap = (stop - start) % n
            lengths.append(sum(sides[(start + j) % n] for j in range(gap)))
        return np.array(lengths)

    def corner_points(self) -> np.ndarray:
        return self.polygon.vertices[list(self.corners)]

    def rotated(self) -> "Quadrilateral":
        """Relabel corners by one step; the module becomes its reciprocal."""
        c = self.corners
        module = None if self.module is None else 1.0 / self.module
        return Quadrilateral(self.polygon, (c[1], c[2], c[3], c[0]), module)

    def with_module(self, module: float) -> "Quadrilateral":
        return Quadrilateral(self.polygon, self.corners, module)


@dataclass(frozen=True)
class RectangleDomain:
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0) or not np.isfinite(self.width * self.height):
            raise DomainError(f"Rectangle sides must be positive, got {self.width} x {self.height}")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.height / self.width

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, points: Union[complex, np.ndarray], tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=complex)
        return (
            (pts.real >= -tol)
            & (pts.real <= self.width + tol)
            & (pts.imag >= -tol)
            & (pts.imag <= self.height + tol)
        )

    def corner_points(self) -> np.ndarray:
        w, h = self.width, self.height
        return np.array([0.0, w, w + 1j * h, 1j * h])

    def as_polygon(self) -> Polygon:
        return Polygon.from_points(self.corner_points())

    def as_quadrilateral(self) -> Quadrilateral:
        return Quadrilateral(self.as_polygon(), (0, 1, 2, 3), self.aspect)


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Cell-centred samples of a bounding box, restricted to a domain."""

    points: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    shape: Tuple[int, int]
    origin: complex
    step: complex

    @property
    def size(self) -> int:
        return self.points.size

    def to_image(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Scatter per-sample values back onto the (ny, nx) grid."""
        image = np.full(self.shape[0] * self.shape[1], fill, dtype=np.asarray(values).dtype)
        image[self.index] = values
        return image.reshape(self.shape)


def _split_resolution(resolution: Resolution) -> Tuple[int, int]:
    if isinstance(resolution, (tuple, list)):
        nx, ny = int(resolution[0]), int(resolution[1])
    else:
        nx = ny = int(resolution)
    if nx < 1 or ny < 1:
        raise DomainError(f"Grid resolution must be positive, got {resolution}")
    return nx, ny


def _box_samples(x0: float, y0: float, width: float, height: float, resolution: Resolution):
    nx, ny = _split_resolution(resolution)
    dx, dy = width / nx, height / ny
    xs = x0 + (np.arange(nx) + 0.5) * dx
    ys = y0 + (np.arange(ny) + 0.5) * dy
    grid = (xs[None, :] + 1j * ys[:, None]).ravel()
    return grid, (ny, nx), complex(dx, dy)


def torus_grid(width: float, height: float, resolution: Resolution = 500) -> SampleGrid:
    points, shape, step = _box_samples(0.0, 0.0, width, height, resolution)
    weights = np.full(points.size, width * height / points.size)
    return SampleGrid(points, weights, np.arange(points.size), shape, 0j, step)


def polygon_grid(polygon: Polygon, resolution: Resolution = 500) -> SampleGrid:
    """Samples inside ``polygon`` with weights summing to its exact area."""
    xmin, ymin, xmax, ymax = polygon.bounds
    points, shape, step = _box_samples(xmin, ymin, xmax - xmin, ymax - ymin, resolution)
    inside = polygon.contains(points)
    count = int(np.count_nonzero(inside))
    if count == 0:
        raise DomainError(f"Grid resolution {resolution} places no samples inside the polygon")
    index = np.nonzero(inside)[0]
    weights = np.full(count, polygon.area / count)
    return SampleGrid(points[index], weights, index, shape, complex(xmin, ymin), step)


def torus_distance(
    r1: Union[complex, np.ndarray], r2: Union[complex, np.ndarray], width: float, height: float
) -> Union[float, np.ndarray]:
    """Shortest distance between points on the W x H torus (per-axis wrap)."""
    if not (width > 0 and height > 0):
        raise DomainError(f"Torus sides must be positive, got {width} x {height}")
    d = np.asarray(r1, dtype=complex) - np.asarray(r2, dtype=complex)
    dx = np.abs(np.remainder(d.real + 0.5 * width, width) - 0.5 * width)
    dy = np.abs(np.remainder(d.imag + 0.5 * height, height) - 0.5 * height)
    dist = np.hypot(dx, dy)
    return float(dist) if dist.ndim == 0 else dist


def _wrap(values: np.ndarray, period: float) -> np.ndarray:
    wrapped = np.remainder(values, period)
    return np.where(wrapped >= period, 0.0, wrapped)


def nearest_site(
    points: np.ndarray, sites: np.ndarray, torus: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    """Index of the nearest site per point; ties go to the lowest site index."""
    points = np.asarray(points, dtype=complex).ravel()
    sites = np.asarray(sites, dtype=complex).ravel()
    if torus is None:
        data = np.column_stack([sites.real, sites.imag])
        query = np.column_stack([points.real, points.imag])
        tree = cKDTree(data)
    else:
        w, h = torus
        data = np.column_stack([_wrap(sites.real, w), _wrap(sites.imag, h)])
        query = np.column_stack([_wrap(points.real, w), _wrap(points.imag, h)])
        tree = cKDTree(data, boxsize=(w, h))
    k = min(4, sites.size)
    dist, idx = tree.query(query, k=list(range(1, k + 1)))
    nearest = dist[:, :1]
    tied = dist <= nearest * (1.0 + TIE_TOLERANCE) + 1e-300
    candidates = np.where(tied, idx, np.iinfo(np.int64).max)
    return candidates.min(axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CellPartition:
    """Assignment of weighted sample points to cells.

    ``weights`` sum to ``domain_area``; cell ``l`` is the set of samples with
    ``labels == l``.
    """

    points: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    n_cells: int
    domain_area: float
    grid: Optional[SampleGrid] = None

    def areas(self) -> np.ndarray:
        return np.bincount(self.labels, weights=self.weights, minlength=self.n_cells)

    def shares(self, density: np.ndarray) -> np.ndarray:
        """Per-cell integral of a per-sample density."""
        return np.bincount(self.labels, weights=self.weights * density, minlength=self.n_cells)

    def cell_points(self, cell: int) -> np.ndarray:
        return self.points[self.labels == cell]

    def empty_cells(self) -> np.ndarray:
        return np.nonzero(np.bincount(self.labels, minlength=self.n_cells) == 0)[0]


def _check_sites(
    sites: Iterable[complex], scale: float, torus: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    sites = np.asarray(sites, dtype=complex).ravel()
    if sites.size == 0:
        raise DomainError("At least one site is required")
    if not np.all(np.isfinite(sites)):
        raise DomainError("Site coordinates must be finite")
    if torus is None:
        tree = cKDTree(np.column_stack([sites.real, sites.imag]))
    else:
        w, h = torus
        tree = cKDTree(np.column_stack([_wrap(sites.real, w), _wrap(sites.imag, h)]), boxsize=(w, h))
    pairs = sorted(tree.query_pairs(COINCIDENT_TOLERANCE * scale))
    if pairs:
        i, j = pairs[0]
        raise DomainError(f"Coincident sites {i} and {j} at {sites[i]}; every site needs its own cell")
    return sites


def voronoi_on_torus(
    sites: Iterable[complex], width: float, height: float, resolution: Resolution = 500
) -> CellPartition:
    """Nearest-site partition of the torus under the wrap-around distance."""
    rect = RectangleDomain(width, height)
    sites = np.asarray(sites, dtype=complex).ravel()
    inside = (sites.real >= 0) & (sites.real < width) & (sites.imag >= 0) & (sites.imag < height)
    if not np.all(inside):
        raise DomainError("Torus sites must lie in [0, W) x [0, H)")
    sites = _check_sites(sites, rect.diameter, (width, height))
    grid = torus_grid(width, height, resolution)
    labels = nearest_site(grid.points, sites, (width, height))
    partition = CellPartition(grid.points, labels, grid.weights, sites.size, rect.area, grid)
    _warn_empty(partition)
    return partition


def voronoi_in_polygon(
    sites: Iterable[complex], polygon: Polygon, resolution: Resolution = 500
) -> CellPartition:
    """Euclidean nearest-site partition of a polygon, clipped to its interior."""
    sites = _check_sites(sites, polygon.diameter)
    if not np.all(polygon.contains(sites)):
        raise DomainError("All sites must lie inside the polygon")
    grid = polygon_grid(polygon, resolution)
    labels = nearest_site(grid.points, sites)
    partition = CellPartition(grid.points, labels, grid.weights, sites.size, polygon.area, grid)
    _warn_empty(partition)
    return partition


def _warn_empty(partition: CellPartition) -> None:
    empty = partition.empty_cells()
    if empty.size:
        logger.warning(f"{empty.size} cells received no grid samples; increase the resolution")
