"""Exception types shared across the package."""


class StreamModelError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatchError(StreamModelError, ValueError):
    """Tensor/matrix shapes do not line up for the requested operation."""


class RankTooLargeError(StreamModelError, ValueError):
    """A requested latent rank exceeds the corresponding mode size."""


class WindowTooShortError(StreamModelError, ValueError):
    """The current window is too short for the requested decomposition."""


class InitializationError(StreamModelError, RuntimeError):
    """No usable model could be fitted during initialization."""


class DivergenceError(StreamModelError, RuntimeError):
    """The latent dynamical system blew up during integration."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"state magnitude exceeded the guard at step {step}")


class DataFormatError(StreamModelError, ValueError):
    """An input record file violates the expected format."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EvaluationError(StreamModelError, ValueError):
    """Forecast evaluation was asked for targets that were never observed."""
