"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PmcError(Exception):
    """Base class for every error raised by pmcgd."""


class ParameterError(PmcError, ValueError):
    """Unknown parameter, mismatched parameter sets or missing assignment."""


class ModelError(PmcError, ValueError):
    """A model violates a structural invariant."""


class GraphPreservationError(ModelError):
    """An instantiation changes the topology of the model."""


class RegionError(PmcError, ValueError):
    """Malformed region, or a point outside of it."""


class ParseError(PmcError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)


class SolverError(PmcError, RuntimeError):
    """The linear solver failed."""


class ConvergenceError(SolverError):
    """The iterative solver did not reach the requested residual."""


class ConfigError(PmcError, ValueError):
    """Invalid search configuration."""
