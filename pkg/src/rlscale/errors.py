"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class RLScaleError(Exception):
    """Base class for all package errors."""


class ConfigError(RLScaleError, ValueError):
    """Invalid configuration or unsupported parameter."""


class CapacityError(RLScaleError, ValueError):
    """A request exceeds the number of distinct items available."""


class LengthError(RLScaleError, ValueError):
    """A sequence does not fit the policy's context window."""


class DataError(RLScaleError, ValueError):
    """Malformed, inconsistent or out-of-order data."""


class FormatError(DataError):
    """A persisted record does not match the expected schema."""

    def __init__(self, message: str, field: str | None = None, version: int | None = None):
        self.field = field
        self.version = version
        prefix = f"format v{version}: " if version is not None else ""
        super().__init__(prefix + message)


class NumericError(RLScaleError, ArithmeticError):
    """Non-finite loss or gradient."""


class FitError(RLScaleError, ValueError):
    """A scaling-law fit cannot be computed from the given points."""
