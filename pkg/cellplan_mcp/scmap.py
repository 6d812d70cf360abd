"""Schwarz-Christoffel strip maps and the rectangle <-> polygon map pair.

The polygon is reached from the strip ``0 <= Im z <= 1`` by

    f(z) = A + C * integral prod_k (-i sinh(pi (z - z_k) / 2)) ** beta_k dz

where bottom-side prevertices use ``z - z_k`` and top-side ones ``z_k - z``.
Corners sit at z = i (c0), 0 (c1), R (c2) and R + i (c3); the two strip ends
are ordinary boundary points of the polygon, so the arcs c0->c1 and c2->c3 are
parametrised through t = exp(pi z) instead of the strip coordinate.

The strip in turn is the image of the rectangle ``[0, 1] x [0, m_Q]`` under
``g(w) = log(sn(2 K w - K | m)) / pi`` with ``m = exp(-2 pi R)``.
"""

import functools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import special
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import cKDTree

from cellplan_mcp.errors import ConvergenceError, DomainError, ScenarioError, SingularityError
from cellplan_mcp.geometry import Polygon, Quadrilateral, RectangleDomain, as_points
from cellplan_mcp.numerics import (
    ELLIPTIC_CONVENTION,
    gauss_jacobi_rule,
    jacobi_sncndn,
    module_from_strip_length,
    solve_nonlinear_system,
    strip_length_from_module,
)

logger = logging.getLogger("CellPlanMCP")

QUADRATURE_NODES = 12
ASYMPTOTIC_REAL_PART = 40.0
STRIP_END = 35.0
MAX_PANELS = 400
CHUNK = 8192
CORNER_SNAP = 1e-12
PREVERTEX_HIT = 1e-12
ARC_KINDS = ("left", "bottom", "right", "top")


class _Integrand:
    """The SC integrand and its compound Gauss-Jacobi quadrature."""

    def __init__(self, prevertices: np.ndarray, betas: np.ndarray, nodes: int = QUADRATURE_NODES):
        self.z = np.asarray(prevertices, dtype=complex)
        self.betas = np.asarray(betas, dtype=float)
        self.sign = np.where(self.z.imag > 0.5, -1.0, 1.0)
        self.nodes = nodes
        self.legendre = gauss_jacobi_rule(nodes, 0.0, 0.0)

    def log_terms(self, pts: np.ndarray) -> np.ndarray:
        """log(f'(z) / C) with the branch fixed by log(-i sinh(.))."""
        u = (0.5 * np.pi) * self.sign * (np.asarray(pts, dtype=complex)[..., None] - self.z)
        big = np.abs(u.real) > ASYMPTOTIC_REAL_PART
        with np.errstate(all="ignore"):
            direct = np.log(-1j * np.sinh(np.where(big, 0.0, u)))
            asymptotic = np.sign(u.real) * (u - 0.5j * np.pi) - np.log(2.0)
            return np.where(big, asymptotic, direct) @ self.betas

    def _panel(self, left: np.ndarray, right: np.ndarray, singular: Optional[int]) -> np.ndarray:
        half = 0.5 * (right - left)
        if singular is None:
            rule = self.legendre
        else:
            rule = gauss_jacobi_rule(self.nodes, 0.0, float(self.betas[singular]))
        pts = left[:, None] + (rule.nodes[None, :] + 1.0) * half[:, None]
        logs = self.log_terms(pts)
        scale = 1.0
        if singular is not None:
            beta = self.betas[singular]
            logs = logs - beta * np.log(np.abs(pts - self.z[singular]))
            scale = np.abs(half) ** beta
        return half * scale * (np.exp(logs) @ rule.weights)

    @staticmethod
    def _advance(left: np.ndarray, end: np.ndarray, dist: np.ndarray) -> np.ndarray:
        # panel length <= half the distance to the nearest prevertex
        span = end - left
        length = np.abs(span)
        reach = 0.5 * dist
        with np.errstate(divide="ignore", invalid="ignore"):
            right = left + span * (reach / length)
        return np.where(reach >= length, end, right)

    def integrate(self, start: np.ndarray, end: np.ndarray, singular: Optional[np.ndarray] = None) -> np.ndarray:
        """Integral of f'/C along straight segments start -> end.

        ``singular[i]`` names the prevertex sitting at ``start[i]`` (or -1).
        """
        start = np.atleast_1d(np.asarray(start, dtype=complex)).ravel()
        end = np.broadcast_to(np.asarray(end, dtype=complex), start.shape).ravel()
        if singular is None:
            singular = np.full(start.shape, -1, dtype=np.int64)
        singular = np.broadcast_to(np.asarray(singular, dtype=np.int64), start.shape).ravel()
        if start.size > CHUNK:
            return np.concatenate(
                [
                    self.integrate(start[i : i + CHUNK], end[i : i + CHUNK], singular[i : i + CHUNK])
                    for i in range(0, start.size, CHUNK)
                ]
            )

        total = np.zeros(start.size, dtype=complex)
        active = np.abs(end - start) > 0
        left = start.copy()

        dist = np.abs(left[:, None] - self.z[None, :])
        rows = np.nonzero(singular >= 0)[0]
        dist[rows, singular[rows]] = np.inf
        right = self._advance(left, end, dist.min(axis=1))
        for k in np.unique(singular[active & (singular >= 0)]):
            idx = np.nonzero(active & (singular == k))[0]
            total[idx] += self._panel(left[idx], right[idx], int(k))
        idx = np.nonzero(active & (singular < 0))[0]
        if idx.size:
            total[idx] += self._panel(left[idx], right[idx], None)
        left = right
        active &= right != end

        for _ in range(MAX_PANELS):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                return total
            dist = np.abs(left[idx, None] - self.z[None, :]).min(axis=1)
            right = self._advance(left[idx], end[idx], dist)
            total[idx] += self._panel(left[idx], right, None)
            left[idx] = right
            active[idx] = right != end[idx]
        raise ConvergenceError(
            "Quadrature subdivision did not reach the end point", best=total, iterations=MAX_PANELS
        )

    def side_integrals(self, sides: np.ndarray) -> np.ndarray:
        """Integrals between consecutive prevertices k -> k+1, split at the midpoint."""
        n = self.z.size
        k = np.asarray(sides, dtype=np.int64)
        nxt = (k + 1) % n
        mid = 0.5 * (self.z[k] + self.z[nxt])
        halves = self.integrate(
            np.concatenate([self.z[k], self.z[nxt]]),
            np.concatenate([mid, mid]),
            np.concatenate([k, nxt]),
        )
        return halves[: k.size] - halves[k.size :]


def _arc_points(kind: str, frac: np.ndarray, strip_length: float) -> np.ndarray:
    if kind == "bottom":
        return strip_length * frac + 0j
    if kind == "top":
        return strip_length * (1.0 - frac) + 1j
    t = 2.0 * frac - 1.0
    depth = np.log(np.maximum(np.abs(t), 1e-300)) / np.pi
    if kind == "left":
        return np.where(t > 0, depth + 0j, depth + 1j)
    return np.where(t < 0, strip_length - depth + 0j, strip_length - depth + 1j)


class _Layout:
    """Unknowns of the parameter problem: log R and per-arc log spacings."""

    def __init__(self, quad: Quadrilateral):
        self.quad = quad
        self.n = quad.polygon.n
        self.arcs = quad.arcs()
        self.size = 1 + sum(len(a) for a in self.arcs)

    def prevertices(self, y: np.ndarray) -> Tuple[np.ndarray, float]:
        c0, c1, c2, c3 = self.quad.corners
        strip_length = float(np.exp(y[0]))
        z = np.empty(self.n, dtype=complex)
        z[c0], z[c1], z[c2], z[c3] = 1j, 0.0, strip_length, strip_length + 1j
        pos = 1
        for arc, kind in zip(self.arcs, ARC_KINDS):
            if not arc:
                continue
            logits = np.concatenate([[0.0], y[pos : pos + len(arc)]])
            pos += len(arc)
            gaps = np.exp(logits - logits.max())
            frac = np.cumsum(gaps / gaps.sum())[:-1]
            z[arc] = _arc_points(kind, frac, strip_length)
        return z, strip_length

    def initial_guess(self) -> np.ndarray:
        lengths = self.quad.arc_lengths()
        estimate = (lengths[1] + lengths[3]) / (lengths[0] + lengths[2])
        y = [np.log(strip_length_from_module(max(estimate, 1e-3)))]
        sides = self.quad.polygon.side_lengths()
        for i, (arc, kind) in enumerate(zip(self.arcs, ARC_KINDS)):
            if not arc:
                continue
            start = self.quad.corners[i]
            run = np.cumsum([sides[(start + j) % self.n] for j in range(len(arc) + 1)])
            frac = run[:-1] / run[-1]
            if kind in ("left", "right"):
                t = 2.0 * frac - 1.0
                t = np.where(np.abs(t) < 0.05, 0.05, t)
                frac = np.sort(0.5 * (t + 1.0))
            gaps = np.diff(np.concatenate([[0.0], frac, [1.0]]))
            gaps = np.maximum(gaps, 1e-6)
            y.extend(np.log(gaps[1:] / gaps[0]))
        return np.array(y, dtype=float)


@dataclass(frozen=True, eq=False)
class StripMap:
    """Solved strip map: prevertices, constants and the strip length."""

    quadrilateral: Quadrilateral
    prevertices: np.ndarray
    base: complex
    constant: complex
    strip_length: float
    module: float
    residual: float
    vertex_images: np.ndarray
    warnings: Tuple[str, ...] = ()

    @property
    def polygon(self) -> Polygon:
        return self.quadrilateral.polygon

    @property
    def betas(self) -> np.ndarray:
        return self.quadrilateral.polygon.angles - 1.0

    @property
    def parameter(self) -> float:
        return float(np.exp(-2.0 * np.pi * self.strip_length))

    @functools.cached_property
    def integrand(self) -> _Integrand:
        return _Integrand(self.prevertices, self.betas)

    def derivative(self, z: Union[complex, np.ndarray]) -> np.ndarray:
        return self.constant * np.exp(self.integrand.log_terms(z))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": "cellplan.stripmap",
            "version": 1,
            "elliptic_convention": ELLIPTIC_CONVENTION,
            "polygon": self.polygon.to_list(),
            "corners": list(self.quadrilateral.corners),
            "prevertices": [[float(z.real), float(z.imag)] for z in self.prevertices],
            "A": [float(self.base.real), float(self.base.imag)],
            "C": [float(self.constant.real), float(self.constant.imag)],
            "strip_length": self.strip_length,
            "module": self.module,
            "residual": self.residual,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StripMap":
        """Rebuild and revalidate a strip map written by :meth:`to_dict`."""
        if data.get("format") != "cellplan.stripmap":
            raise ScenarioError("Not a strip map document")
        try:
            polygon = Polygon.from_points(data["polygon"])
            quad = Quadrilateral(polygon, tuple(data["corners"]))
            prevertices = as_points(data["prevertices"]).ravel()
            strip_length = float(data["strip_length"])
            module = float(data["module"])
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"Malformed strip map: {e}")
        if prevertices.size != polygon.n:
            raise ScenarioError("Strip map prevertex count does not match the polygon")
        c0, c1, c2, c3 = quad.corners
        expected = np.array([1j, 0.0, strip_length, strip_length + 1j])
        if np.max(np.abs(prevertices[[c0, c1, c2, c3]] - expected)) > 1e-12 * max(1.0, strip_length):
            raise ScenarioError("Strip map corners are not at their normalised prevertices")
        if abs(module_from_strip_length(strip_length) - module) > 1e-9 * max(1.0, module):
            raise ScenarioError("Strip map module is inconsistent with its strip length")
        sm = _assemble(quad, prevertices, strip_length, float(data.get("residual", 0.0)))
        closure = np.max(np.abs(sm.vertex_images - polygon.vertices))
        if closure > 1e-6 * polygon.diameter:
            raise ScenarioError(f"Strip map does not reproduce the polygon (error {closure:.3e})")
        return sm

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StripMap":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioError(f"Cannot read strip map {path}: {e}")
        return cls.from_dict(data)


def _conditioning_warnings(polygon: Polygon) -> Tuple[str, ...]:
    notes = []
    for k, alpha in enumerate(polygon.angles):
        if alpha < 0.05 or alpha > 1.95:
            notes.append(f"vertex {k} has interior angle fraction {alpha:.3f}; map is ill-conditioned there")
    return tuple(notes)


def _assemble(quad: Quadrilateral, prevertices: np.ndarray, strip_length: float, residual: float) -> StripMap:
    polygon = quad.polygon
    n = polygon.n
    integrand = _Integrand(prevertices, polygon.angles - 1.0)
    sides = integrand.side_integrals(np.arange(n))
    c1 = quad.corners[1]
    base = complex(polygon.vertices[c1])
    constant = complex((polygon.vertices[(c1 + 1) % n] - base) / sides[c1])
    images = np.empty(n, dtype=complex)
    images[c1] = base
    for j in range(n - 1):
        k = (c1 + j) % n
        images[(k + 1) % n] = images[k] + constant * sides[k]
    warnings = _conditioning_warnings(polygon)
    for note in warnings:
        logger.warning(note)
    sm = StripMap(
        quadrilateral=quad.with_module(module_from_strip_length(strip_length)),
        prevertices=prevertices,
        base=base,
        constant=constant,
        strip_length=strip_length,
        module=module_from_strip_length(strip_length),
        residual=residual,
        vertex_images=images,
        warnings=warnings,
    )
    object.__setattr__(sm, "integrand", integrand)
    return sm


def solve_strip_parameters(quad: Quadrilateral, tol: float = 1e-10) -> StripMap:
    """Solve the parameter problem so that side-length ratios match the polygon."""
    layout = _Layout(quad)
    polygon = quad.polygon
    n = polygon.n
    betas = polygon.angles - 1.0
    log_lengths = np.log(polygon.side_lengths())
    target = log_lengths[1 : n - 2] - log_lengths[0]
    sides = np.arange(n - 2)

    def residual(y: np.ndarray) -> np.ndarray:
        z, _ = layout.prevertices(y)
        if not np.all(np.isfinite(z)):
            return np.full(layout.size, np.inf)
        try:
            integrals = _Integrand(z, betas).side_integrals(sides)
        except ConvergenceError:
            return np.full(layout.size, np.inf)
        with np.errstate(divide="ignore"):
            logs = np.log(np.abs(integrals))
        return (logs[1:] - logs[0]) - target

    logger.info(f"Solving strip parameter problem: {n} vertices, corners {quad.corners}")
    y = solve_nonlinear_system(residual, layout.initial_guess(), tol=tol, label="strip parameter problem")
    z, strip_length = layout.prevertices(y)
    final = float(np.max(np.abs(residual(y))))
    sm = _assemble(quad, z, strip_length, final)
    logger.info(f"Strip map solved: R={strip_length:.10f}, module={sm.module:.10f}, residual={final:.2e}")
    return sm


def conformal_module(quad: Quadrilateral) -> float:
    return solve_strip_parameters(quad).module


def _rectangle_check(w: np.ndarray, module: float) -> None:
    tol = 1e-12 * max(1.0, np.hypot(1.0, module))
    bad = (w.real < -tol) | (w.real > 1.0 + tol) | (w.imag < -tol) | (w.imag > module + tol)
    if np.any(bad) or not np.all(np.isfinite(w)):
        raise DomainError(f"Point outside the canonical rectangle [0, 1] x [0, {module:.6g}]")


def _strip_coordinates(w: np.ndarray, sm: StripMap) -> Tuple[np.ndarray, np.ndarray]:
    m = sm.parameter
    quarter = special.ellipk(m)
    u = 2.0 * quarter * w - quarter
    sn, cn, dn = jacobi_sncndn(u, m)
    sn = sn.real + 1j * np.where(sn.imag > 0, sn.imag, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log(sn) / np.pi
        dz = (2.0 * quarter / np.pi) * cn * dn / sn
    pole = ~np.isfinite(sn)
    z = np.where(pole, sm.strip_length + STRIP_END, z)
    z = np.clip(z.real, -STRIP_END, sm.strip_length + STRIP_END) + 1j * np.clip(np.nan_to_num(z.imag), 0.0, 1.0)
    return z, dz


def rect_to_strip(w: Union[complex, np.ndarray], sm: StripMap) -> Union[complex, np.ndarray]:
    """Map canonical-rectangle points onto the strip (ends truncated at |Re z| = 35)."""
    arr = np.asarray(w, dtype=complex)
    _rectangle_check(arr, sm.module)
    z, _ = _strip_coordinates(arr, sm)
    return complex(z) if z.ndim == 0 else z


def strip_to_polygon(
    z: Union[complex, np.ndarray], sm: StripMap, start: Optional[int] = None
) -> Union[complex, np.ndarray]:
    """Evaluate the SC integral, integrating from the nearest (or given) prevertex."""
    arr = np.asarray(z, dtype=complex)
    flat = arr.ravel()
    if np.any(flat.imag < -1e-12) or np.any(flat.imag > 1.0 + 1e-12) or not np.all(np.isfinite(flat)):
        raise DomainError("Point outside the strip 0 <= Im z <= 1")
    zv = sm.prevertices
    gaps = np.abs(flat[:, None] - zv[None, :])
    nearest = gaps.argmin(axis=1)
    hit = gaps[np.arange(flat.size), nearest] < PREVERTEX_HIT * max(1.0, sm.strip_length)
    base = nearest if start is None else np.full(flat.size, int(start))
    values = np.empty(flat.size, dtype=complex)
    values[hit] = sm.vertex_images[nearest[hit]]
    todo = ~hit
    if np.any(todo):
        b = base[todo]
        values[todo] = sm.vertex_images[b] + sm.constant * sm.integrand.integrate(zv[b], flat[todo], b)
    values = values.reshape(arr.shape)
    return complex(values) if values.ndim == 0 else values


@dataclass(frozen=True, eq=False)
class ConformalMapPair:
    """F^-1 : rectangle -> polygon together with its inverse F.

    The map rectangle is ``[0, 1] x [0, module]``. Image grids are computed on
    demand and cached; the pair itself never changes after construction.
    """

    strip_map: StripMap
    rectangle: RectangleDomain
    guess_resolution: int = 40
    _cache: Dict[Any, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, strip_map: StripMap, guess_resolution: int = 40) -> "ConformalMapPair":
        return cls(strip_map, RectangleDomain(1.0, strip_map.module), guess_resolution)

    @property
    def module(self) -> float:
        return self.strip_map.module

    @property
    def polygon(self) -> Polygon:
        return self.strip_map.polygon

    def canonical_images(self, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-centred rectangle samples and their polygon images."""
        key = ("centred", int(resolution))
        if key not in self._cache:
            u = (np.arange(resolution) + 0.5) / resolution
            v = (np.arange(resolution) + 0.5) * self.module / resolution
            w = (u[None, :] + 1j * v[:, None]).ravel()
            self._cache[key] = (w, map_inverse(w, self))
        return self._cache[key]

    def _guess_tree(self) -> Tuple[cKDTree, np.ndarray]:
        key = ("guess", self.guess_resolution)
        if key not in self._cache:
            w, images = self.canonical_images(self.guess_resolution)
            self._cache[key] = (cKDTree(np.column_stack([images.real, images.imag])), w)
        return self._cache[key]

    def initial_guess(self, zeta: np.ndarray) -> np.ndarray:
        tree, w = self._guess_tree()
        _, idx = tree.query(np.column_stack([zeta.real, zeta.imag]))
        return w[idx]

    def forward_interpolated(self, points: np.ndarray, resolution: int = 160) -> np.ndarray:
        """Bulk F via linear interpolation of a closed image grid.

        Accurate to the grid spacing; use :func:`map_forward` for exact inverses.
        """
        key = ("interp", int(resolution))
        if key not in self._cache:
            u = np.linspace(0.0, 1.0, resolution + 1)
            v = np.linspace(0.0, self.module, resolution + 1)
            w = (u[None, :] + 1j * v[:, None]).ravel()
            images = map_inverse(w, self)
            xy = np.column_stack([images.real, images.imag])
            self._cache[key] = (LinearNDInterpolator(xy, w), NearestNDInterpolator(xy, w))
        linear, nearest = self._cache[key]
        pts = np.asarray(points, dtype=complex).ravel()
        xy = np.column_stack([pts.real, pts.imag])
        w = linear(xy)
        missing = ~np.isfinite(w)
        if np.any(missing):
            w[missing] = nearest(xy[missing])
        w = np.clip(w.real, 0.0, 1.0) + 1j * np.clip(w.imag, 0.0, self.module)
        return w


def map_inverse(w: Union[complex, np.ndarray], cm: ConformalMapPair) -> Union[complex, np.ndarray]:
    """F^-1(w) = f(g(w)): canonical rectangle -> physical polygon."""
    arr = np.asarray(w, dtype=complex)
    _rectangle_check(arr, cm.module)
    flat = arr.ravel()
    # rectangle corners go straight to their polygon vertices
    gaps = np.abs(flat[:, None] - cm.rectangle.corner_points()[None, :])
    corner = gaps.argmin(axis=1)
    snapped = gaps[np.arange(flat.size), corner] <= CORNER_SNAP * cm.rectangle.diameter
    values = np.empty(flat.size, dtype=complex)
    sm = cm.strip_map
    values[snapped] = sm.vertex_images[np.asarray(sm.quadrilateral.corners)[corner[snapped]]]
    if not np.all(snapped):
        z, _ = _strip_coordinates(flat[~snapped], sm)
        values[~snapped] = strip_to_polygon(z, sm)
    values = values.reshape(arr.shape)
    return complex(values) if values.ndim == 0 else values


def derivative_unchecked(w: np.ndarray, cm: ConformalMapPair) -> np.ndarray:
    z, dz = _strip_coordinates(w, cm.strip_map)
    return cm.strip_map.derivative(z) * dz


def map_derivative(w: Union[complex, np.ndarray], cm: ConformalMapPair) -> Union[complex, np.ndarray]:
    """d(F^-1)/dw; raises SingularityError at or near a rectangle corner."""
    arr = np.asarray(w, dtype=complex)
    _rectangle_check(arr, cm.module)
    flat = arr.ravel()
    corners = cm.rectangle.corner_points()
    if np.any(np.abs(flat[:, None] - corners[None, :]) < 1e-8 * cm.rectangle.diameter):
        raise SingularityError("Derivative requested at a corner of the canonical rectangle")
    values = derivative_unchecked(flat, cm)
    bad = ~np.isfinite(values)
    if np.any(bad):
        # strip-end points: step inside by a hair
        nudged = flat[bad] + 1j * np.where(flat[bad].imag < 0.5 * cm.module, 1e-9, -1e-9) * cm.module
        values[bad] = derivative_unchecked(nudged, cm)
    if not np.all(np.isfinite(values)) or np.any(values == 0):
        raise SingularityError("Derivative requested at the preimage of a polygon vertex")
    values = values.reshape(arr.shape)
    return complex(values) if values.ndim == 0 else values


def map_forward(
    zeta: Union[complex, np.ndarray], cm: ConformalMapPair, tol: float = 1e-10, max_iter: int = 60
) -> Union[complex, np.ndarray]:
    """F(zeta) by damped Newton on F^-1(w) = zeta.

    ``tol`` bounds the physical residual |F^-1(w) - zeta| in absolute terms.
    """
    arr = np.asarray(zeta, dtype=complex)
    flat = arr.ravel()
    polygon = cm.polygon
    if not np.all(polygon.contains(flat)):
        raise DomainError("Point outside the physical polygon")
    scale = polygon.diameter
    close = polygon.boundary_distance(flat) < 1e-9 * scale
    if np.any(close):
        logger.warning(f"{int(np.count_nonzero(close))} points lie on or near the polygon boundary")
    w = cm.initial_guess(flat)
    err = np.abs(map_inverse(w, cm) - flat)
    for iteration in range(max_iter):
        active = np.nonzero(err > tol)[0]
        if active.size == 0:
            break
        wa = w[active]
        residual = map_inverse(wa, cm) - flat[active]
        with np.errstate(all="ignore"):
            step = residual / derivative_unchecked(wa, cm)
        step = np.where(np.isfinite(step), step, 0.0)
        t = np.ones(active.size)
        best_w, best_err = wa.copy(), err[active].copy()
        pending = np.arange(active.size)
        for _ in range(12):
            trial = wa[pending] - t[pending] * step[pending]
            trial = np.clip(trial.real, 0.0, 1.0) + 1j * np.clip(trial.imag, 0.0, cm.module)
            trial_err = np.abs(map_inverse(trial, cm) - flat[active][pending])
            better = trial_err < best_err[pending]
            best_w[pending[better]] = trial[better]
            best_err[pending[better]] = trial_err[better]
            pending = pending[~better]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        w[active], err[active] = best_w, best_err
    else:
        if np.any(err > tol):
            raise ConvergenceError(
                "Forward map Newton iteration did not converge",
                best=w.reshape(arr.shape),
                residual=float(err.max()),
                iterations=max_iter,
            )
    w = w.reshape(arr.shape)
    return complex(w) if w.ndim == 0 else w
