"""Error taxonomy shared across the package.

The CLI maps each class to a distinct exit code, so keep the hierarchy
flat and purpose-named.
"""


class N2OLabError(Exception):
    """Base class for all package errors."""


class ConfigError(N2OLabError):
    """Invalid parameter, configuration or scenario definition."""


class SolverError(N2OLabError):
    """ODE integration failed or produced an inadmissible state."""

    def __init__(self, message: str, time_of_failure: float | None = None):
        super().__init__(message)
        self.time_of_failure = time_of_failure


class SchemaError(N2OLabError):
    """Dataset/trajectory column schema mismatch."""


class StructuralError(N2OLabError):
    """Dimension or wiring mismatch inside the model assembly."""
