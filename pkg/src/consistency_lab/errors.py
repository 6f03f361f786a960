"""Exception types shared across the package."""


class DomainError(ValueError):
    """A time or state argument lies outside its admissible range."""


class ShapeError(ValueError):
    """An array argument has an incompatible shape."""


class IntegrationError(RuntimeError):
    """A trajectory became non-finite or violated the divergence guard.

    Carries the step index (and path index for batched runs) where the
    problem was first detected.
    """

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class TrainingError(RuntimeError):
    """A training step produced a non-finite loss or gradient."""

    def __init__(self, message, last_good=None, metrics=None):
        super().__init__(message)
        self.last_good = last_good
        self.metrics = metrics


class ConfigError(ValueError):
    """A run-config file failed strict parsing; message names the key path."""
