"""Planning tools: lattice placement, canonical loads, dimensioning, full runs."""

import json
import logging
from typing import Any, Callable, Dict, Optional

from mcp.server.fastmcp import Context

from cellplan_mcp.canonical import LinkModel, place_lattice
from cellplan_mcp.geometry import RectangleDomain
from cellplan_mcp.loadcoupling import canonical_uniform_load, dimension_network
from cellplan_mcp.pipeline import execute_pipeline
from cellplan_mcp.scenario import parse_scenario

logger = logging.getLogger("CellPlanMCP")


def register(mcp: Any, get_planning_session: Callable[[], Any]) -> None:
    @mcp.tool()
    def place_lattice_info(
        ctx: Context,
        width: float,
        height: float,
        cells: int,
        tiling: str = "hexagonal",
        fit: Optional[str] = None,
    ) -> str:
        """Place a regular base-station lattice on a W x H torus.

        Parameters: width, height, cells, tiling ('hexagonal' or 'rectangular'),
        fit ('exact', 'stretch' or 'native').
        """
        try:
            lattice = place_lattice(RectangleDomain(width, height), cells, tiling, fit)
            return json.dumps(lattice.to_dict(), indent=2)
        except Exception as e:
            logger.error(f"Error placing lattice: {str(e)}")
            return f"Error placing lattice: {str(e)}"

    @mcp.tool()
    def canonical_load(
        ctx: Context,
        width: float,
        height: float,
        cells: int,
        tiling: str = "hexagonal",
        beta: float = 3.5,
        mean_session: float = 120.0,
        mean_interarrival: float = 0.05,
        min_rate: float = 1e5,
        bandwidth: float = 5e6,
        noise: float = 0.0,
    ) -> str:
        """Common cell load of a periodic lattice under uniform demand."""
        try:
            link = LinkModel(beta, noise, bandwidth, min_rate)
            lattice = place_lattice(RectangleDomain(width, height), cells, tiling, "native")
            alpha = canonical_uniform_load(lattice, mean_session / mean_interarrival, link)
            result = {"cells": lattice.n_cells, "radius": lattice.radius, "alpha_c": alpha}
            return json.dumps(result, indent=2)
        except Exception as e:
            logger.error(f"Error computing canonical load: {str(e)}")
            return f"Error computing canonical load: {str(e)}"

    @mcp.tool()
    def dimension(
        ctx: Context,
        target_load: float,
        width: float,
        height: float,
        tiling: str = "hexagonal",
        beta: float = 3.5,
        mean_session: float = 120.0,
        mean_interarrival: float = 0.05,
        min_rate: float = 1e5,
        bandwidth: float = 5e6,
        max_cells: int = 2000,
    ) -> str:
        """Smallest base-station count whose uniform load meets target_load."""
        try:
            link = LinkModel(beta, 0.0, bandwidth, min_rate)
            dim = dimension_network(
                target_load,
                RectangleDomain(width, height),
                mean_session / mean_interarrival,
                link,
                tiling,
                max_cells=max_cells,
            )
            result = {
                "cells": dim.cells,
                "shape": [dim.lattice.columns, dim.lattice.rows],
                "load": dim.load,
                "estimate": dim.estimate,
            }
            return json.dumps(result, indent=2)
        except Exception as e:
            logger.error(f"Error dimensioning network: {str(e)}")
            return f"Error dimensioning network: {str(e)}"

    @mcp.tool()
    def plan_scenario(
        ctx: Context,
        scenario: Dict[str, Any],
        out_dir: Optional[str] = None,
        grid: Optional[int] = None,
    ) -> str:
        """Run the full planning pipeline for a scenario document.

        Parameters: scenario (same keys as a scenario JSON file), out_dir, grid.
        Returns the run manifest.
        """
        try:
            parsed = parse_scenario(scenario)
            strip_map = None
            if parsed.physical and parsed.strip_map is None:
                _, cm = get_planning_session().map_for(parsed.quadrilateral())
                strip_map = cm.strip_map
            run = execute_pipeline(parsed, out_dir, grid=grid, strip_map=strip_map)
            return json.dumps(run.manifest.to_dict(), indent=2)
        except Exception as e:
            logger.error(f"Error planning scenario: {str(e)}")
            return f"Error planning scenario: {str(e)}"
