"""Exception hierarchy shared by all modules."""


class QhrxError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(QhrxError, ValueError):
    """Invalid or unresolvable configuration value."""


class RangeError(QhrxError, ValueError):
    """Input outside the calibrated or physical range."""


class FitError(QhrxError, ValueError):
    """A least-squares fit could not be performed or was rejected."""


class CalibrationError(QhrxError, ValueError):
    """A calibration produced non-physical values."""


class PhysicalityError(QhrxError, ValueError):
    """A derived quantity violates a physical bound."""


class ExtractionError(QhrxError, ValueError):
    """Randomness extraction refused or given malformed input."""


class InsufficientDataError(QhrxError, ValueError):
    """Not enough samples for the requested statistic."""


class NumericalInstabilityError(QhrxError, ArithmeticError):
    """An intermediate quantity became unphysical; ``matrix`` holds the offender."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix

    def __str__(self):
        base = super().__str__()
        if self.matrix is None:
            return base
        import numpy as np

        with np.printoptions(precision=6, suppress=True, linewidth=120):
            return f"{base}\n{np.asarray(self.matrix)}"


class CutoffError(QhrxError, ValueError):
    """Fock-space truncation too small for the requested state."""


class AcceptanceError(QhrxError):
    """A ``--check`` tolerance was not met."""
