"""Exception hierarchy shared across the package."""


class LineageError(Exception):
    """Base class for all package errors."""


class ConfigError(LineageError, ValueError):
    """Invalid parameters or configuration."""


class NumericsError(LineageError, ArithmeticError):
    """A numerical solver left its admissible range or failed to converge."""


class DegenerateConditioning(LineageError, ZeroDivisionError):
    """Conditioning on an event whose probability is (numerically) zero."""


class PopulationCapExceeded(LineageError, RuntimeError):
    """A simulated tree would exceed ``max_nodes``."""

    def __init__(self, max_nodes):
        super().__init__(f"tree exceeded max_nodes={max_nodes}")
        self.max_nodes = max_nodes


class OutOfRangeRecord(LineageError, ValueError):
    """A record fell outside the histogram axes."""


class InsufficientData(LineageError, ValueError):
    """Too few observations for the requested test."""


class DomainError(LineageError, ValueError):
    """An argument lies outside the domain of an operation."""
