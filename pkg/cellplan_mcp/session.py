"""PlanningSession: solved conformal maps shared across tool calls."""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from cellplan_mcp.errors import DomainError, ScenarioError
from cellplan_mcp.geometry import Polygon, Quadrilateral
from cellplan_mcp.scmap import ConformalMapPair, StripMap, solve_strip_parameters

logger = logging.getLogger("CellPlanMCP")


def quadrilateral_digest(quad: Quadrilateral) -> str:
    payload = {"polygon": quad.polygon.to_list(), "corners": list(quad.corners)}
    return hashlib.sha256(json.dumps(payload).encode("utf-8")).hexdigest()[:16]


def build_quadrilateral(polygon: Sequence[Sequence[float]], corners: Sequence[int]) -> Quadrilateral:
    if len(corners) != 4:
        raise DomainError(f"Exactly four corners are required, got {list(corners)}")
    return Quadrilateral(Polygon.from_points(polygon), tuple(int(c) for c in corners))


@dataclass
class PlanningSession:
    """Map cache in memory, mirrored to ``cache_dir`` when one is set."""

    cache_dir: Optional[Path] = None
    maps: Dict[str, ConformalMapPair] = field(default_factory=dict)

    @classmethod
    def from_env(cls) -> "PlanningSession":
        cache = os.environ.get("CELLPLAN_CACHE_DIR")
        return cls(Path(cache) if cache else None)

    def open(self) -> bool:
        """Prepare the disk cache; False if it cannot be used."""
        if self.cache_dir is None:
            return True
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            logger.info(f"Strip map cache at {self.cache_dir}")
            return True
        except OSError as e:
            logger.error(f"Cannot use strip map cache {self.cache_dir}: {str(e)}")
            self.cache_dir = None
            return False

    def close(self) -> None:
        if self.maps:
            logger.info(f"Releasing {len(self.maps)} cached conformal maps")
        self.maps.clear()

    def _cache_path(self, key: str) -> Optional[Path]:
        return None if self.cache_dir is None else self.cache_dir / f"{key}.json"

    def map_for(self, quad: Quadrilateral) -> Tuple[str, ConformalMapPair]:
        """Return the (digest, map pair) of ``quad``, solving only on a cache miss."""
        key = quadrilateral_digest(quad)
        if key in self.maps:
            return key, self.maps[key]
        path = self._cache_path(key)
        sm: Optional[StripMap] = None
        if path is not None and path.exists():
            try:
                sm = StripMap.load(path)
                logger.info(f"Loaded strip map {key} from cache")
            except ScenarioError as e:
                logger.warning(f"Ignoring unusable cached strip map {path}: {str(e)}")
        if sm is None:
            sm = solve_strip_parameters(quad)
            if path is not None:
                sm.save(path)
        self.maps[key] = ConformalMapPair.build(sm)
        return key, self.maps[key]

    def get(self, key: str) -> ConformalMapPair:
        if key not in self.maps:
            raise ScenarioError(f"No solved map with id '{key}'; call solve_strip_map first")
        return self.maps[key]

    def describe(self) -> List[Dict[str, object]]:
        return [
            {"map_id": key, "module": cm.module, "vertices": cm.polygon.n}
            for key, cm in sorted(self.maps.items())
        ]
