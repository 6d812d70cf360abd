"""Mapping tools: strip-map solves, conformal modules, point mapping."""

import json
import logging
from typing import Any, Callable, List

import numpy as np
from mcp.server.fastmcp import Context

from cellplan_mcp.scmap import map_forward, map_inverse
from cellplan_mcp.session import build_quadrilateral

logger = logging.getLogger("CellPlanMCP")


def _points(values: List[List[float]]) -> np.ndarray:
    return np.array([complex(x, y) for x, y in values], dtype=complex)


def register(mcp: Any, get_planning_session: Callable[[], Any]) -> None:
    @mcp.tool()
    def solve_strip_map(ctx: Context, polygon: List[List[float]], corners: List[int]) -> str:
        """Solve the conformal map of a polygon onto a rectangle.

        Parameters: polygon ([[x, y], ...] counter-clockwise), corners (four vertex
        indices in counter-clockwise order). Returns a map_id for later calls.
        """
        try:
            session = get_planning_session()
            key, cm = session.map_for(build_quadrilateral(polygon, corners))
            sm = cm.strip_map
            result = {
                "map_id": key,
                "module": sm.module,
                "strip_length": sm.strip_length,
                "residual": sm.residual,
                "warnings": list(sm.warnings),
            }
            return json.dumps(result, indent=2)
        except Exception as e:
            logger.error(f"Error solving strip map: {str(e)}")
            return f"Error solving strip map: {str(e)}"

    @mcp.tool()
    def conformal_module_of(ctx: Context, polygon: List[List[float]], corners: List[int]) -> str:
        """Conformal module of a quadrilateral. Parameters: polygon, corners."""
        try:
            session = get_planning_session()
            key, cm = session.map_for(build_quadrilateral(polygon, corners))
            return json.dumps({"map_id": key, "module": cm.module, "rectangle": [1.0, cm.module]}, indent=2)
        except Exception as e:
            logger.error(f"Error computing conformal module: {str(e)}")
            return f"Error computing conformal module: {str(e)}"

    @mcp.tool()
    def map_points(ctx: Context, map_id: str, points: List[List[float]], direction: str = "inverse") -> str:
        """Map points through a solved map.

        Parameters: map_id, points ([[x, y], ...]), direction ('inverse' sends
        rectangle points to the polygon, 'forward' polygon points to the rectangle).
        """
        try:
            cm = get_planning_session().get(map_id)
            pts = _points(points)
            if direction == "inverse":
                images = map_inverse(pts, cm)
            elif direction == "forward":
                images = map_forward(pts, cm)
            else:
                return f"Error mapping points: unknown direction '{direction}'"
            images = np.atleast_1d(images)
            return json.dumps({"direction": direction, "points": [[z.real, z.imag] for z in images]}, indent=2)
        except Exception as e:
            logger.error(f"Error mapping points: {str(e)}")
            return f"Error mapping points: {str(e)}"

    @mcp.tool()
    def list_maps(ctx: Context) -> str:
        """List the conformal maps solved in this session."""
        try:
            return json.dumps(get_planning_session().describe(), indent=2)
        except Exception as e:
            logger.error(f"Error listing maps: {str(e)}")
            return f"Error listing maps: {str(e)}"
