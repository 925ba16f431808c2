"""Exception types shared across the package.

Plain ``ValueError`` is used for local argument/dimension problems; the
classes here exist where callers (mainly the CLI) need to tell failure
modes apart.
"""


class ConfigError(ValueError):
    """A config document or CLI flag set is malformed."""


class DataError(ValueError):
    """A dataset is malformed or inconsistent with the model."""


class TrainingError(RuntimeError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.step = step
        self.round_index = round_index


class OracleError(RuntimeError):
    """The finite-difference oracle could not evaluate the target function."""
