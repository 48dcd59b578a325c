"""Exception hierarchy shared by every module of the toolkit."""


class KancError(Exception):
    """Base class for all toolkit errors."""


class EvaluationError(KancError):
    """A tape node produced a non-finite value."""

    def __init__(self, node: int, op: str, message: str | None = None):
        self.node = node
        self.op = op
        super().__init__(message or f"non-finite value at node {node} ({op})")


class ShapeError(KancError, ValueError):
    """Parameter arrays do not match the network description."""


class DomainError(KancError, ValueError):
    """An input lies outside the supported range."""


class RefinementError(KancError):
    """Grid refinement could not transfer the spline coefficients."""


class MetricError(KancError, ValueError):
    """A metric is undefined for the given data."""


class DivergenceError(KancError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


class ConfigError(KancError, ValueError):
    """Invalid configuration value or file."""


class SymbolicError(KancError):
    """Symbolic regression was asked to do something impossible."""
