"""pedroute: route extraction, crowd simulation and travel-time equilibrium.

The pipeline turns a declarative walking-geometry scenario into an
occupancy grid, derives discrete route alternatives from geodesic
distance fields, walks agents along them with a social-force model and
iterates route-choice probabilities until average travel times level
out.
"""

from .errors import (
    AssignmentError,
    PedrouteError,
    RoutingError,
    ScenarioError,
    SimulationError,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentError",
    "PedrouteError",
    "RoutingError",
    "ScenarioError",
    "SimulationError",
    "__version__",
]
