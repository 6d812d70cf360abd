"""Cellular network planning through conformal maps of quadrilaterals."""

__version__ = "0.1.0"

# Expose the main entry points for easier imports
from .pipeline import RunManifest, run_pipeline
from .scenario import Scenario, load_scenario
from .scmap import ConformalMapPair, StripMap, conformal_module, solve_strip_parameters
