"""Four-phase planning run: demand, map, canonical network, physical network."""

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from cellplan_mcp import __version__
from cellplan_mcp.canonical import TorusLattice, factorizations, place_lattice
from cellplan_mcp.demand import (
    DemandField,
    demand_cdf,
    induced_density,
    load_demand_field,
    load_density_csv,
    normalisation_constant,
    patch_conservation_check,
    pushforward_check,
    random_discs,
    target_density,
    total_variation,
)
from cellplan_mcp.errors import DomainError, PlacementError, ScenarioError
from cellplan_mcp.geometry import RectangleDomain, polygon_grid, voronoi_in_polygon
from cellplan_mcp.loadcoupling import (
    LoadVector,
    ScenarioResult,
    canonical_uniform_load,
    compare_domains,
    dimension_network,
    load_fixed_point,
    sweep_canonical,
)
from cellplan_mcp.numerics import ELLIPTIC_CONVENTION
from cellplan_mcp.scenario import Scenario
from cellplan_mcp.scmap import ConformalMapPair, StripMap, map_inverse, solve_strip_parameters

logger = logging.getLogger("CellPlanMCP")

PHASES = ("demand", "map", "canonical", "physical")
EMIT_KINDS = ("mapping-grid", "load-pattern", "cdf", "sites")
MANIFEST = "manifest.json"
FAILED_MARKER = "FAILED"
CSV_FORMAT = "%.12g"
PATCH_RADII = (0.03, 0.08)
GRID_LINES = 11
GRID_LINE_SAMPLES = 101
FIXED_POINT_TOL = 1e-12


@dataclass
class RunManifest:
    """Everything a run produced, with SHA-256 digests of its files."""

    scenario: str
    scenario_hash: str
    seed: int
    grid: int
    tool_version: str = __version__
    elliptic_convention: str = ELLIPTIC_CONVENTION
    status: str = "running"
    module: Optional[float] = None
    strip_length: Optional[float] = None
    cells: Optional[int] = None
    placement_note: Optional[str] = None
    alpha_c: Optional[float] = None
    correlation: Optional[float] = None
    phases: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    failure: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


@dataclass
class PlanningRun:
    """Mutable state of one run; later phases read what earlier ones left."""

    scenario: Scenario
    out_dir: Path
    manifest: RunManifest
    grid: int
    seed: int
    target: Optional[np.ndarray] = None
    strip_map: Optional[StripMap] = None
    maps: Optional[ConformalMapPair] = None
    demand: Optional[DemandField] = None
    rectangle: Optional[RectangleDomain] = None
    lattice: Optional[TorusLattice] = None
    canonical_sites: Optional[np.ndarray] = None
    physical_sites: Optional[np.ndarray] = None
    boundary: Optional[np.ndarray] = None
    alpha_c: Optional[float] = None
    periodic: Optional[LoadVector] = None
    nonperiodic: Optional[LoadVector] = None
    physical: Optional[LoadVector] = None
    result: Optional[ScenarioResult] = None
    sweep_rows: Optional[List[Dict[str, Any]]] = None

    def path(self, name: str) -> Path:
        return self.out_dir / name


@contextmanager
def _phase(run: PlanningRun, name: str) -> Iterator[None]:
    logger.info(f"Phase '{name}' started")
    start = time.perf_counter()
    try:
        yield
    except Exception as e:
        run.manifest.status = "failed"
        run.manifest.failure = {"phase": name, "kind": type(e).__name__, "message": str(e)}
        logger.error(f"Phase '{name}' failed: {str(e)}")
        raise
    finally:
        run.manifest.phases[name] = round(time.perf_counter() - start, 6)
    logger.info(f"Phase '{name}' finished in {run.manifest.phases[name]:.2f}s")


def _save_table(path: Path, header: str, rows: np.ndarray) -> Path:
    np.savetxt(path, rows, fmt=CSV_FORMAT, delimiter=",", header=header, comments="")
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _demand_phase(run: PlanningRun) -> None:
    scenario = run.scenario
    if not scenario.physical:
        logger.info(f"Canonical-only scenario: uniform demand, V={scenario.volume:g}")
        return
    polygon = scenario.quadrilateral().polygon
    if scenario.demand_csv is not None:
        grid = polygon_grid(polygon, run.grid)
        run.target = load_density_csv(scenario.demand_csv, grid)
    else:
        _, run.target = target_density(polygon, scenario.demand, run.grid)


def _strip_map(run: PlanningRun) -> StripMap:
    scenario = run.scenario
    quad = scenario.quadrilateral()
    if run.strip_map is not None:
        sm = run.strip_map
    elif scenario.strip_map is None:
        return solve_strip_parameters(quad)
    else:
        sm = StripMap.load(scenario.strip_map)
    same_polygon = sm.polygon.n == quad.polygon.n and np.allclose(sm.polygon.vertices, quad.polygon.vertices)
    if not same_polygon or sm.quadrilateral.corners != quad.corners:
        raise ScenarioError("The supplied strip map belongs to a different quadrilateral")
    logger.info(f"Using a previously solved strip map (module {sm.module:.10f})")
    return sm


def _map_phase(run: PlanningRun) -> None:
    scenario = run.scenario
    run.strip_map = _strip_map(run)
    run.strip_map.save(run.path("strip_map.json"))
    run.manifest.module = run.strip_map.module
    run.manifest.strip_length = run.strip_map.strip_length
    run.manifest.warnings.extend(run.strip_map.warnings)
    run.maps = ConformalMapPair.build(run.strip_map)
    run.demand = induced_density(run.maps, run.grid, scenario.mean_session, scenario.mean_interarrival)
    run.demand.save_csv(run.path("demand.csv"))

    checks = run.manifest.checks
    checks["normalisation_constant"] = normalisation_constant(run.maps, run.demand)
    checks["inverse_module"] = 1.0 / run.maps.module
    checks["total_variation_to_target"] = total_variation(run.demand, run.target)
    if not scenario.checks:
        return
    rng = np.random.default_rng(run.seed)
    discs = random_discs(run.maps.polygon, scenario.patches, PATCH_RADII, rng)
    errors = [abs(p - c) for p, c in (patch_conservation_check(run.maps, run.demand, d) for d in discs)]
    checks["conservation_max_error"] = float(max(errors))
    checks["pushforward_p_value"] = pushforward_check(
        run.maps, run.demand, scenario.pushforward_samples, seed=run.seed
    )
    logger.info(
        f"Demand checks: conservation error {checks['conservation_max_error']:.2e}, "
        f"pushforward p={checks['pushforward_p_value']:.3f}"
    )


def _canonical_rectangle(run: PlanningRun) -> RectangleDomain:
    scenario = run.scenario
    if not scenario.physical:
        return scenario.canonical_rectangle()
    # area-preserving rectangle whose aspect is the module times the mismatch factor
    area = run.maps.polygon.area
    aspect = run.maps.module * scenario.aspect_mismatch
    width = float(np.sqrt(area / aspect))
    return RectangleDomain(width, aspect * width)


def _place(run: PlanningRun, rect: RectangleDomain, cells: int) -> TorusLattice:
    scenario = run.scenario
    try:
        return place_lattice(rect, cells, scenario.tiling, scenario.fit, scenario.lattice_shape)
    except PlacementError as e:
        if scenario.lattice_shape is not None or factorizations(cells, scenario.tiling) or e.nearest_feasible is None:
            raise
        note = f"L={cells} is infeasible for {scenario.tiling} tiling; snapped to L={e.nearest_feasible}"
        logger.warning(note)
        run.manifest.placement_note = note
        return place_lattice(rect, e.nearest_feasible, scenario.tiling, scenario.fit)


def _canonical_phase(run: PlanningRun) -> None:
    scenario = run.scenario
    link = scenario.link_model()
    rect = run.rectangle = _canonical_rectangle(run)
    if scenario.sweep is not None:
        run.sweep_rows = sweep_canonical(
            rect, scenario.sweep.cells, scenario.sweep.betas, scenario.volume, link, scenario.tiling, scenario.cell_grid
        )
        table = np.array(
            [[r["cells"], r["beta"], np.nan if r["alpha_c"] is None else r["alpha_c"], r["radius"]] for r in run.sweep_rows]
        )
        _save_table(run.path("sweep.csv"), "cells,beta,alpha_c,radius", table)
    if scenario.cells is None and scenario.target_load is None:
        return

    cells = scenario.cells
    if scenario.target_load is not None:
        dim = dimension_network(
            scenario.target_load, rect, scenario.volume, link, scenario.tiling, scenario.cell_grid, scenario.max_cells
        )
        cells = dim.cells
        run.manifest.placement_note = (
            f"dimensioned for target load {scenario.target_load}: L={dim.cells} "
            f"(load {dim.load:.6f}, closed-form estimate {dim.estimate})"
        )
        run.manifest.checks["dimensioning"] = {str(k): v for k, v in sorted(dim.evaluated.items())}
    lattice = run.lattice = _place(run, rect, cells)
    lattice.save(run.path("lattice.json"))
    run.canonical_sites = lattice.sites
    run.boundary = lattice.boundary_flags()
    run.manifest.cells = lattice.n_cells

    # alpha_c and both canonical runs share one set of cell samples
    per_cell = min(scenario.cell_grid, max(16, int(round(run.grid / np.sqrt(lattice.n_cells)))))
    run.alpha_c = canonical_uniform_load(lattice, scenario.volume, link, resolution=per_cell)
    run.manifest.alpha_c = run.alpha_c

    partition = lattice.cell_partition(per_cell)
    uniform = np.full(partition.points.size, 1.0 / lattice.rectangle.area)
    run.periodic = load_fixed_point(
        lattice.sites,
        partition,
        uniform,
        scenario.volume,
        link,
        torus=lattice.torus,
        tol=FIXED_POINT_TOL,
        label="canonical-periodic",
    )
    run.periodic.save_csv(run.path("loads_periodic.csv"))
    run.manifest.checks["periodic_spread"] = float(np.ptp(run.periodic.loads))

    run.nonperiodic = load_fixed_point(
        lattice.sites,
        partition,
        uniform,
        scenario.volume,
        link,
        torus=lattice.torus,
        tol=FIXED_POINT_TOL,
        boundary=run.boundary,
        label="canonical-nonperiodic",
        interference_wraps=False,
    )
    run.nonperiodic.save_csv(run.path("loads_canonical.csv"))
    logger.info(
        f"Canonical loads: alpha_c={run.alpha_c:.6f}, periodic spread {run.manifest.checks['periodic_spread']:.2e}, "
        f"non-periodic max {run.nonperiodic.loads.max():.6f}"
    )


def _physical_phase(run: PlanningRun) -> None:
    scenario = run.scenario
    rect, maps = run.rectangle, run.maps
    w = run.canonical_sites.real / rect.width + 1j * run.canonical_sites.imag / rect.height * maps.module
    run.physical_sites = np.asarray(map_inverse(w, maps))
    if not np.all(maps.polygon.contains(run.physical_sites)):
        raise DomainError("Mapped base-station sites left the physical polygon")
    _save_sites(run)

    partition = voronoi_in_polygon(run.physical_sites, maps.polygon, run.grid)
    if partition.points.size != run.demand.points.size:
        raise DomainError("Physical partition and demand field are sampled on different grids")
    run.physical = load_fixed_point(
        run.physical_sites,
        partition,
        run.demand.density,
        run.demand.volume,
        scenario.link_model(),
        boundary=run.boundary,
        label="physical",
    )
    run.physical.save_csv(run.path("loads_physical.csv"))
    run.result = compare_domains(
        run.periodic,
        run.nonperiodic,
        run.physical,
        run.alpha_c,
        maps.module,
        rect.aspect,
        tuple(run.manifest.warnings),
    )
    run.result.save_json(run.path("result.json"))
    run.manifest.correlation = run.result.correlation
    run.manifest.checks["worst_case_holds"] = run.result.worst_case_holds
    run.manifest.checks["module_match"] = run.result.module_match


def _save_sites(run: PlanningRun) -> Path:
    data = {
        "canonical": [[float(s.real), float(s.imag)] for s in run.canonical_sites],
        "physical": [[float(s.real), float(s.imag)] for s in run.physical_sites],
        "boundary": [bool(b) for b in run.boundary],
        "rectangle": [run.rectangle.width, run.rectangle.height],
    }
    path = run.path("sites.json")
    path.write_text(json.dumps(data, indent=2))
    return path


def seal_manifest(run: PlanningRun) -> RunManifest:
    """Digest every file in the run folder into the manifest and save it."""
    artifacts = sorted(
        p for p in run.out_dir.iterdir() if p.is_file() and p.name not in (MANIFEST, FAILED_MARKER)
    )
    run.manifest.artifacts = {p.name: _digest(p) for p in artifacts}
    run.manifest.save(run.path(MANIFEST))
    return run.manifest


def execute_pipeline(
    scenario: Scenario,
    out_dir: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    grid: Optional[int] = None,
    emit: Sequence[str] = (),
    stop_after: str = "physical",
    strip_map: Optional[StripMap] = None,
) -> PlanningRun:
    """Run the phases up to ``stop_after`` and return the full run state.

    A previously solved ``strip_map`` skips the parameter problem. On failure the manifest records the phase and cause, a ``FAILED`` marker is
    written next to the partial artifacts, and the error propagates.
    """
    if stop_after not in PHASES:
        raise ScenarioError(f"Unknown phase '{stop_after}'; choose from {PHASES}")
    unknown = [k for k in emit if k not in EMIT_KINDS]
    if unknown:
        raise ScenarioError(f"Unknown plot kind(s) {unknown}; choose from {EMIT_KINDS}")
    target = scenario.resolved_out_dir(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    run_seed = scenario.resolved_seed(seed)
    run_grid = scenario.resolved_grid(grid)
    manifest = RunManifest(scenario.name, scenario.digest(), run_seed, run_grid)
    run = PlanningRun(scenario, target, manifest, run_grid, run_seed, strip_map=strip_map)
    run.path(FAILED_MARKER).unlink(missing_ok=True)
    logger.info(f"Planning '{scenario.name}' into {target} (grid {run_grid}, seed {run_seed})")

    steps = [("demand", _demand_phase), ("map", _map_phase), ("canonical", _canonical_phase)]
    if scenario.physical and scenario.lattice_requested:
        steps.append(("physical", _physical_phase))
    if not scenario.physical:
        steps = [s for s in steps if s[0] != "map"]
    try:
        for name, step in steps:
            with _phase(run, name):
                step(run)
            if name == stop_after:
                break
        for kind in emit:
            emit_plot_data(run, kind)
    except Exception:
        run.manifest.status = "failed"
        failure = run.manifest.failure or {"phase": "emit", "kind": "Error", "message": "emission failed"}
        run.path(FAILED_MARKER).write_text(f"{failure['phase']}: {failure['kind']}: {failure['message']}\n")
        seal_manifest(run)
        raise
    run.manifest.status = "ok"
    seal_manifest(run)
    logger.info(f"Run '{scenario.name}' complete: {len(run.manifest.artifacts)} artifacts")
    return run


def run_pipeline(
    scenario: Scenario,
    out_dir: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    grid: Optional[int] = None,
    emit: Sequence[str] = (),
) -> RunManifest:
    return execute_pipeline(scenario, out_dir, seed, grid, emit).manifest


def _require(value: Any, kind: str, phase: str) -> Any:
    if value is None:
        raise ScenarioError(f"Plot data '{kind}' needs a completed '{phase}' phase")
    return value


def emit_plot_data(run: PlanningRun, kind: str, out_dir: Optional[Union[str, Path]] = None) -> Path:
    """Write the CSV behind one figure kind; identical inputs give identical bytes."""
    if kind not in EMIT_KINDS:
        raise ScenarioError(f"Unknown plot kind '{kind}'; choose from {EMIT_KINDS}")
    folder = Path(out_dir) if out_dir is not None else run.out_dir
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / f"{kind}.csv"

    if kind == "mapping-grid":
        maps = _require(run.maps, kind, "map")
        rows = []
        levels = np.linspace(0.0, 1.0, GRID_LINES)
        along = np.linspace(0.0, 1.0, GRID_LINE_SAMPLES)
        for family in (0, 1):
            for line, level in enumerate(levels):
                if family == 0:
                    w = level + 1j * along * maps.module
                else:
                    w = along + 1j * level * maps.module
                z = np.asarray(map_inverse(w, maps))
                rows.append(np.column_stack([np.full(w.size, family), np.full(w.size, line), w.real, w.imag, z.real, z.imag]))
        return _save_table(path, "family,line,u,v,x,y", np.vstack(rows))

    if kind == "load-pattern":
        periodic = _require(run.periodic, kind, "canonical")
        nonperiodic = _require(run.nonperiodic, kind, "canonical")
        physical = _require(run.physical, kind, "physical")
        cells = np.arange(periodic.size)
        return _save_table(
            path,
            "cell,periodic,canonical,physical",
            np.column_stack([cells, periodic.loads, nonperiodic.loads, physical.loads]),
        )

    if kind == "cdf":
        demand = _require(run.demand, kind, "map")
        return _save_table(path, "probability,fraction", demand_cdf(demand))

    canonical = _require(run.canonical_sites, kind, "canonical")
    physical = _require(run.physical_sites, kind, "physical")
    boundary = _require(run.boundary, kind, "canonical")
    cells = np.arange(canonical.size)
    return _save_table(
        path,
        "cell,canonical_x,canonical_y,physical_x,physical_y,boundary",
        np.column_stack([cells, canonical.real, canonical.imag, physical.real, physical.imag, boundary.astype(int)]),
    )


def load_run(scenario: Scenario, out_dir: Optional[Union[str, Path]] = None) -> PlanningRun:
    """Rebuild run state from the artifacts of an earlier run."""
    folder = scenario.resolved_out_dir(out_dir)
    manifest_path = folder / MANIFEST
    if not manifest_path.exists():
        raise ScenarioError(f"No run manifest in {folder}")
    try:
        stored = json.loads(manifest_path.read_text())
        manifest = RunManifest(**stored)
    except (json.JSONDecodeError, TypeError) as e:
        raise ScenarioError(f"Unreadable run manifest {manifest_path}: {e}")
    run = PlanningRun(scenario, folder, manifest, manifest.grid, manifest.seed)
    run.alpha_c = manifest.alpha_c
    if (folder / "strip_map.json").exists():
        run.strip_map = StripMap.load(folder / "strip_map.json")
        run.maps = ConformalMapPair.build(run.strip_map)
    if scenario.physical and (folder / "demand.csv").exists():
        run.demand = load_demand_field(folder / "demand.csv", scenario.quadrilateral().polygon)
    if (folder / "sites.json").exists():
        sites = json.loads((folder / "sites.json").read_text())
        run.canonical_sites = np.array([complex(x, y) for x, y in sites["canonical"]])
        run.physical_sites = np.array([complex(x, y) for x, y in sites["physical"]])
        run.boundary = np.array(sites["boundary"], dtype=bool)
        run.rectangle = RectangleDomain(*sites["rectangle"])
    for attr, name, label in (
        ("periodic", "loads_periodic.csv", "canonical-periodic"),
        ("nonperiodic", "loads_canonical.csv", "canonical-nonperiodic"),
        ("physical", "loads_physical.csv", "physical"),
    ):
        if (folder / name).exists():
            setattr(run, attr, LoadVector.load_csv(folder / name, label))
    logger.info(f"Loaded run artifacts from {folder} (status {manifest.status})")
    return run
