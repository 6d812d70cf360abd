"""CellPlan MCP server: FastMCP setup, session lifecycle, tool registration."""

import logging
from contextlib import asynccontextmanager
from typing import Any, AsyncIterator, Dict, Optional

from mcp.server.fastmcp import FastMCP

from cellplan_mcp.session import PlanningSession
from cellplan_mcp.tools import register_all

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("CellPlanMCP")

_planning_session: Optional[PlanningSession] = None


@asynccontextmanager
async def server_lifespan(server: FastMCP) -> AsyncIterator[Dict[str, Any]]:
    """Manage server startup and shutdown lifecycle."""
    try:
        logger.info("CellPlanMCP server starting up")
        try:
            get_planning_session()
        except Exception as e:
            logger.warning(f"Could not prepare the planning session on startup: {str(e)}")
        yield {}
    finally:
        global _planning_session
        if _planning_session:
            _planning_session.close()
            _planning_session = None
        logger.info("CellPlanMCP server shut down")


mcp = FastMCP("CellPlanMCP", lifespan=server_lifespan)


def get_planning_session() -> PlanningSession:
    """Get or create the shared planning session."""
    global _planning_session
    if _planning_session is None:
        session = PlanningSession.from_env()
        if not session.open():
            logger.warning("Continuing without a disk cache for strip maps")
        _planning_session = session
    return _planning_session


# Register all tool modules (must be after get_planning_session is defined)
register_all(mcp, get_planning_session)


def main() -> None:
    """Run the MCP server."""
    mcp.run()


if __name__ == "__main__":
    main()
