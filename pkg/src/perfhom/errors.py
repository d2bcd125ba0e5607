"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class DivergentMomentError(ValueError):
    """A requested mark moment does not exist for the law."""


class ConvergenceError(RuntimeError):
    """A numerical solver stopped above its tolerance."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved
