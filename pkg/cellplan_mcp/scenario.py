"""Scenario documents: validated planning inputs and their defaults."""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cellplan_mcp.canonical import LinkModel
from cellplan_mcp.demand import PRESETS
from cellplan_mcp.errors import DomainError, ScenarioError
from cellplan_mcp.geometry import Polygon, Quadrilateral, RectangleDomain

logger = logging.getLogger("CellPlanMCP")

DEFAULT_GRID = 500
DEFAULT_OUT_DIR = "cellplan-out"


class SweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cells: List[int] = Field(default_factory=lambda: [64, 100, 144, 196, 256, 324, 400], min_length=1)
    betas: List[float] = Field(default_factory=lambda: [2.5, 3.0, 3.5, 4.0], min_length=1)

    @model_validator(mode="after")
    def _check_values(self) -> "SweepSpec":
        if any(c < 1 for c in self.cells):
            raise ValueError("sweep cell counts must be positive")
        if any(b < 2.0 for b in self.betas):
            raise ValueError("sweep path-loss exponents must be at least 2")
        return self


class Scenario(BaseModel):
    """One planning scenario.

    Either ``polygon`` with four ``corners`` (full pipeline) or a bare canonical
    ``rectangle`` (canonical phase only) is given.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    polygon: Optional[List[Tuple[float, float]]] = Field(None, min_length=3)
    corners: Optional[Tuple[int, int, int, int]] = None
    rectangle: Optional[Tuple[float, float]] = None

    demand: str = "uniform"
    demand_csv: Optional[str] = None
    mean_session: float = Field(120.0, gt=0)
    mean_interarrival: float = Field(0.05, gt=0)
    min_rate: float = Field(1e5, gt=0)
    bandwidth: float = Field(5e6, gt=0)

    beta: float = Field(3.5, ge=2.0)
    noise: float = Field(0.0, ge=0.0)
    boundary_noise: float = Field(1.0, ge=0.0)

    tiling: Literal["hexagonal", "rectangular"] = "hexagonal"
    fit: Optional[Literal["exact", "stretch", "native"]] = None
    lattice_shape: Optional[Tuple[int, int]] = None
    cells: Optional[int] = Field(None, ge=1)
    target_load: Optional[float] = Field(None, gt=0.0, le=1.0)
    max_cells: int = Field(2000, ge=1)
    aspect_mismatch: float = Field(1.0, gt=0.0)

    grid: Optional[int] = Field(None, ge=16)
    cell_grid: int = Field(128, ge=16)
    sweep: Optional[SweepSpec] = None

    checks: bool = True
    patches: int = Field(20, ge=1)
    pushforward_samples: int = Field(100_000, ge=100)

    seed: Optional[int] = Field(None, ge=0)
    strip_map: Optional[str] = None
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_consistency(self) -> "Scenario":
        if (self.polygon is None) == (self.rectangle is None):
            raise ValueError("give exactly one of 'polygon' or 'rectangle'")
        if self.polygon is not None and self.corners is None:
            raise ValueError("'corners' is required with 'polygon'")
        if self.rectangle is not None and not (self.rectangle[0] > 0 and self.rectangle[1] > 0):
            raise ValueError("rectangle sides must be positive")
        if self.cells is not None and self.target_load is not None:
            raise ValueError("give only one of 'cells' or 'target_load'")
        if self.cells is None and self.target_load is None:
            if self.polygon is not None or self.sweep is None:
                raise ValueError("one of 'cells' or 'target_load' is required")
        if self.demand not in PRESETS:
            raise ValueError(f"unknown demand preset '{self.demand}'; choose from {sorted(PRESETS)}")
        if self.polygon is not None and self.fit == "native":
            raise ValueError("fit 'native' is only available for canonical-only scenarios")
        return self

    @property
    def physical(self) -> bool:
        return self.polygon is not None

    @property
    def volume(self) -> float:
        return self.mean_session / self.mean_interarrival

    @property
    def lattice_requested(self) -> bool:
        return self.cells is not None or self.target_load is not None

    def quadrilateral(self) -> Quadrilateral:
        if self.polygon is None:
            raise ScenarioError(f"Scenario '{self.name}' has no physical polygon")
        try:
            return Quadrilateral(Polygon.from_points(self.polygon), self.corners)
        except DomainError as e:
            raise ScenarioError(f"Scenario '{self.name}': {e}")

    def canonical_rectangle(self) -> RectangleDomain:
        if self.rectangle is None:
            raise ScenarioError(f"Scenario '{self.name}' has no canonical rectangle")
        return RectangleDomain(*self.rectangle)

    def link_model(self, beta: Optional[float] = None) -> LinkModel:
        return LinkModel(
            beta=self.beta if beta is None else beta,
            noise=self.noise,
            bandwidth=self.bandwidth,
            min_rate=self.min_rate,
            boundary_noise=self.boundary_noise,
        )

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output location excluded)."""
        payload = self.model_dump(mode="json", exclude={"out_dir"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    def resolved_seed(self, override: Optional[int] = None) -> int:
        if override is not None:
            return int(override)
        if self.seed is not None:
            return self.seed
        return int(self.digest()[:8], 16)

    def resolved_grid(self, override: Optional[int] = None) -> int:
        """CLI flag, then scenario, then CELLPLAN_GRID, then the default."""
        if override is not None:
            grid = int(override)
        elif self.grid is not None:
            grid = self.grid
        else:
            grid = int(os.environ.get("CELLPLAN_GRID", DEFAULT_GRID))
        if grid < 16:
            raise ScenarioError(f"Grid resolution must be at least 16, got {grid}")
        return grid

    def resolved_out_dir(self, override: Optional[Union[str, Path]] = None) -> Path:
        if override is not None:
            return Path(override)
        if self.out_dir is not None:
            return Path(self.out_dir)
        return Path(os.environ.get("CELLPLAN_OUT_DIR", DEFAULT_OUT_DIR)) / self.name


def parse_scenario(data: dict, base: Optional[Path] = None) -> Scenario:
    """Validate a scenario mapping; relative file references resolve against ``base``."""
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"Invalid scenario: {e}")
    if base is not None:
        updates = {}
        for key in ("demand_csv", "strip_map"):
            value = getattr(scenario, key)
            if value is not None and not Path(value).is_absolute():
                updates[key] = str(base / value)
        if updates:
            scenario = scenario.model_copy(update=updates)
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}")
    if not isinstance(data, dict):
        raise ScenarioError(f"Scenario {path} must be a JSON object")
    scenario = parse_scenario(data, path.parent)
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario
