"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class PerpetualInsiderError(Exception):
    """Base class for all package errors."""


class ParameterError(PerpetualInsiderError, ValueError):
    """Market parameters or contract data are outside the admissible set."""


class DomainError(PerpetualInsiderError, ValueError):
    """A state point or function argument lies outside the supported domain."""


class SingularityError(PerpetualInsiderError, ZeroDivisionError):
    """Evaluation requested at a singular point (for instance x on the diagonal with j=1)."""


class ConvergenceError(PerpetualInsiderError, RuntimeError):
    """An iterative procedure did not reach its tolerance."""


class StepSizeError(ConvergenceError):
    """An ODE integrator was forced below its minimal step."""


class RootError(PerpetualInsiderError, RuntimeError):
    """A bracketed root search found no sign change."""


class NoRootError(RootError):
    """A transcendental boundary equation has no admissible root."""


class DegenerateError(PerpetualInsiderError, ArithmeticError):
    """A denominator vanished in a closed-form expression."""


class MissingBoundaryError(PerpetualInsiderError, LookupError):
    """A boundary needed for valuation was not supplied or does not cover the query."""


class CoverageError(MissingBoundaryError):
    """Simulated extremum values left the tabulated boundary range."""


class ConfigError(PerpetualInsiderError, ValueError):
    """A simulation or command configuration is invalid."""


class StepError(PerpetualInsiderError, RuntimeError):
    """Too many capped drift evaluations in a singular-drift simulation."""
