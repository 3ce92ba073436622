"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands do not conform to an operation's shape contract."""


class DataError(Exception):
    """Raw trajectory data is unreadable, malformed, or inconsistent."""


class NumericError(Exception):
    """A numeric failure (NaN or non-finite loss) aborted a computation."""


class EmptyMetricError(Exception):
    """A metric was requested over zero valid pedestrian-step pairs."""
