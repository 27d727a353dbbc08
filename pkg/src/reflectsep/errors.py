"""Exception types raised across the package."""


class ReflectSepError(Exception):
    """Base class for all package errors."""


class ShapeError(ReflectSepError, ValueError):
    """Tensors with incompatible shapes were combined."""


class DegenerateInputError(ReflectSepError, ValueError):
    """Input too small (or otherwise degenerate) for the requested operation."""


class ImageFormatError(ReflectSepError, ValueError):
    """An image file could not be decoded."""


class WeightsError(ReflectSepError, ValueError):
    """A backbone weights file does not match the expected topology."""


class ConfigError(ReflectSepError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class SeparationDiverged(ReflectSepError, RuntimeError):
    """The optimization produced a non-finite loss.

    ``last_report`` holds the last finite :class:`~reflectsep.losses.LossReport`
    (or ``None`` if the very first iteration already diverged).
    """

    def __init__(self, message, iteration, last_report=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_report = last_report
