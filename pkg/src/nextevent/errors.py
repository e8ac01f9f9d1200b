"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and data problems exit
with 1, numerical failures during training exit with 2.
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed input data (bad file, unsorted times, bad target)."""


class HierarchyError(ValueError):
    """Inconsistent clustering hierarchy or pooling groups."""


class NumericsError(RuntimeError):
    """Non-finite values where finite ones are required."""


class TrainingDivergedError(NumericsError):
    """Loss became non-finite during optimization; carries the batch id."""

    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id
