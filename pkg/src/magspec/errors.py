"""Exception types shared across the package."""

from __future__ import annotations


class InvalidResolutionError(ValueError):
    """Grid resolution below the supported minimum."""


class GridMismatchError(ValueError):
    """Two objects that must live on the same grid do not."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SizeError(ValueError):
    """Problem too large for exhaustive enumeration."""


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int = 0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class SolverError(RuntimeError):
    """Linear system could not be solved."""


class ConfigError(ValueError):
    """Invalid run configuration."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = ""
        if field:
            where += f" [field: {field}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)
        self.field = field
        self.line = line
