"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ShilnikovError``
so callers (and the CLI) can separate numerical diagnostics from bugs.
"""
from __future__ import annotations


class ShilnikovError(Exception):
    """Base class for all package errors."""


class ConfigError(ShilnikovError, ValueError):
    """Configuration file is missing keys or has out-of-range values."""


class PreconditionViolated(ShilnikovError, ValueError):
    """An operation was called outside its admissible input set."""


class IntegrationBudgetExceeded(ShilnikovError):
    """The ODE integrator hit its step or time budget."""


class HypothesisFailed(ShilnikovError):
    """A quantitative hypothesis of an estimate does not hold.

    ``step`` is the first failing iteration index when the check is
    iterative, ``conditions`` names the failing smallness conditions.
    """

    def __init__(self, message: str, step: int | None = None, conditions=None):
        super().__init__(message)
        self.step = step
        self.conditions = list(conditions or [])


class EstimateViolated(ShilnikovError):
    """A bound that should hold under verified hypotheses was observed to fail."""


class EpsTooLarge(ShilnikovError):
    pass


class NotEnoughCrossings(ShilnikovError):
    pass


class DegenerateTangent(ShilnikovError):
    pass


class NoRadiusFound(ShilnikovError):
    pass


class NoEscape(ShilnikovError):
    """The flowline never reached the exit level within the budget."""


class NewtonDiverged(ShilnikovError):
    pass


class TransversalityLost(ShilnikovError):
    pass


class DomainViolation(ShilnikovError, ValueError):
    pass


class RadiusMiss(ShilnikovError):
    """Inner-map endpoint landed outside the exit disk."""


class LedgerInfeasible(ShilnikovError):
    """A parameter relation failed; ``name`` and ``slack`` identify it."""

    def __init__(self, name: str, slack: float, message: str | None = None):
        super().__init__(message or f"parameter relation '{name}' fails (slack {slack:.6g})")
        self.name = name
        self.slack = slack


class AngleInconsistent(ShilnikovError):
    pass


class DomainExit(ShilnikovError):
    """Flowline left the unit box before the requested lift horizon."""


class LiftMismatch(ShilnikovError):
    pass


class GapViolated(ShilnikovError):
    pass


class CrossingNotFound(ShilnikovError):
    pass


class RefinementFailed(ShilnikovError):
    def __init__(self, message: str, step: int | None = None, diagnostic: str = ""):
        super().__init__(message)
        self.step = step
        self.diagnostic = diagnostic


class WindowBudgetExceeded(ShilnikovError):
    pass


class SpectrumMismatch(ShilnikovError):
    pass


class FitDiverged(ShilnikovError):
    pass


class LambdaUnachievable(ShilnikovError):
    def __init__(self, message: str, achievable: float):
        super().__init__(message)
        self.achievable = achievable


class ContractionStalled(ShilnikovError):
    pass
