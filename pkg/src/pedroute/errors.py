"""Exception types shared across the package."""


class PedrouteError(Exception):
    """Base class for all domain errors raised by pedroute."""


class ScenarioError(PedrouteError):
    """Invalid scenario geometry or parameters."""


class RoutingError(PedrouteError):
    """Route graph construction or enumeration failed."""


class SimulationError(PedrouteError):
    """Agent placement or stepping failed."""


class AssignmentError(PedrouteError):
    """Equilibrium iteration could not proceed."""
