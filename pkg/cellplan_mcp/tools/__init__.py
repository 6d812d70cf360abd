"""Register all CellPlan MCP tools with the FastMCP instance."""

from typing import Callable

# Type for get_planning_session: callable that returns the shared session
GetPlanningSession = Callable[[], object]


def register_all(mcp: object, get_planning_session: GetPlanningSession) -> None:
    """Register all tool modules with the given mcp and session getter."""
    from . import analysis
    from . import mapping
    from . import planning

    mapping.register(mcp, get_planning_session)
    planning.register(mcp, get_planning_session)
    analysis.register(mcp, get_planning_session)
