"""Exception hierarchy shared across the toolkit.

CLI exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class BeamasrError(Exception):
    pass


class InvalidInputError(BeamasrError, ValueError):
    """An argument violates a documented precondition."""


class StateError(BeamasrError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DegenerateFilterError(BeamasrError):
    """MVDR trace denominator vanished; caller should fall back to the
    reference channel."""


class TrainingError(BeamasrError):
    """Training diverged (non-finite loss). Carries the epoch index."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(BeamasrError):
    """Bad configuration file or inconsistent experiment toggles."""


class DataError(BeamasrError):
    """Missing or malformed data artifacts (manifests, WAVs, checkpoints)."""


class NumericError(BeamasrError):
    """Non-finite values where finite ones are required."""
