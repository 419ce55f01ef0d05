"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError /
SolverDivergenceError -> 3, SchemaMismatchError -> 4.
"""


class ConfigError(ValueError):
    """Bad or inconsistent configuration (missing file, invalid value)."""


class SchemaMismatchError(RuntimeError):
    """Dataset or checkpoint does not match the expected schema/config."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during training or simulation."""


class SolverDivergenceError(NumericalError):
    """Cloth solver produced a non-finite coordinate."""

    def __init__(self, frame: int, message: str = ""):
        self.frame = frame
        super().__init__(message or f"solver diverged at frame {frame}")


class InsufficientHistoryError(ValueError):
    """Motion descriptor requested more past frames than the clip holds."""
