"""Exception hierarchy shared by every module."""


class MVFBSDEError(Exception):
    pass


class ConfigurationError(MVFBSDEError, ValueError):
    """Bad parameters, dimensions or configuration documents."""


class SimulationError(MVFBSDEError):
    """A simulated path became non-finite, or a fixed-point sweep diverged."""

    def __init__(self, message, path=None, step=None, history=None):
        super().__init__(message)
        self.path = path
        self.step = step
        self.history = history


class TrainingError(MVFBSDEError):
    """Non-finite loss or gradient while fitting a network."""


class CheckpointError(MVFBSDEError):
    """Unreadable, truncated or mismatched checkpoint."""
