"""Analysis tools: load sweeps and demand distributions."""

import json
import logging
from typing import Any, Callable, List

from mcp.server.fastmcp import Context

from cellplan_mcp.canonical import LinkModel
from cellplan_mcp.demand import demand_cdf, induced_density
from cellplan_mcp.geometry import RectangleDomain
from cellplan_mcp.loadcoupling import sweep_canonical

logger = logging.getLogger("CellPlanMCP")


def register(mcp: Any, get_planning_session: Callable[[], Any]) -> None:
    @mcp.tool()
    def canonical_sweep(
        ctx: Context,
        width: float,
        height: float,
        cells: List[int],
        betas: List[float],
        tiling: str = "hexagonal",
        mean_session: float = 120.0,
        mean_interarrival: float = 0.05,
        min_rate: float = 1e5,
        bandwidth: float = 5e6,
    ) -> str:
        """Table of uniform cell loads over base-station counts and path-loss exponents."""
        try:
            rows = sweep_canonical(
                RectangleDomain(width, height),
                cells,
                betas,
                mean_session / mean_interarrival,
                LinkModel(bandwidth=bandwidth, min_rate=min_rate),
                tiling,
            )
            return json.dumps(rows, indent=2)
        except Exception as e:
            logger.error(f"Error sweeping canonical loads: {str(e)}")
            return f"Error sweeping canonical loads: {str(e)}"

    @mcp.tool()
    def demand_cdf_of(ctx: Context, map_id: str, grid: int = 200, bins: int = 50) -> str:
        """CDF of per-element demand probabilities induced by a solved map.

        Parameters: map_id (from solve_strip_map), grid (samples per axis), bins.
        """
        try:
            cm = get_planning_session().get(map_id)
            field = induced_density(cm, grid)
            table = demand_cdf(field, bins)
            result = {"map_id": map_id, "samples": field.grid.size, "cdf": table.tolist()}
            return json.dumps(result, indent=2)
        except Exception as e:
            logger.error(f"Error computing demand CDF: {str(e)}")
            return f"Error computing demand CDF: {str(e)}"
