"""Exception hierarchy shared by the planner, the CLI and the MCP tools."""

from typing import Any, Optional

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class PlannerError(Exception):
    """Base class for every failure raised by cellplan_mcp."""

    exit_code = EXIT_NUMERICAL


class DomainError(PlannerError, ValueError):
    """Argument outside the domain of an operation (bad geometry, bad range)."""

    exit_code = EXIT_USAGE


class SingularityError(DomainError):
    """Evaluation requested exactly at a singular point (prevertex, corner, site)."""


class PlacementError(DomainError):
    """A lattice with the requested cell count cannot be placed."""

    def __init__(self, message: str, nearest_feasible: Optional[int] = None):
        super().__init__(message)
        self.nearest_feasible = nearest_feasible


class ScenarioError(PlannerError):
    """Scenario, cached artifact or command-line usage is invalid."""

    exit_code = EXIT_USAGE


class ConvergenceError(PlannerError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(
        self,
        message: str,
        best: Any = None,
        residual: float = float("nan"),
        iterations: int = 0,
    ):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.best = best
        self.residual = residual
        self.iterations = iterations


class InfeasibleDemandError(PlannerError):
    """The demand cannot be served: load above 1 or no cell count meets the target."""

    def __init__(self, message: str, achieved: Optional[float] = None):
        super().__init__(message)
        self.achieved = achieved


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, PlannerError):
        return error.exit_code
    return EXIT_NUMERICAL
