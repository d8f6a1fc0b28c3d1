"""Exception and warning types shared across the package."""


class EncalError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(EncalError, ValueError):
    """Inputs whose shapes or labels are inconsistent with each other."""


class SingularKernel(EncalError, RuntimeError):
    """Kernel matrix could not be factorized even at maximum jitter."""


class SingularInnovation(EncalError, RuntimeError):
    """Innovation covariance (H Hᵀ + noise) is not invertible."""


class NonFiniteMember(EncalError, RuntimeError):
    """An ensemble member became NaN or infinite during an update."""


class UnstableStep(EncalError, RuntimeError):
    """Voltage left the admissible range; the time step is too large."""


class NoCapture(EncalError, RuntimeError):
    """No activation (threshold crossing from below) in the window."""


class NoRecovery(EncalError, RuntimeError):
    """Activation found but voltage never recovered within the window."""


class DegenerateLabels(EncalError, ValueError):
    """Classifier training data contains a single class."""


class InsufficientSurvivors(EncalError, RuntimeError):
    """Too few parameter sets survived rejection to train emulators."""


class EmulationQualityError(EncalError, RuntimeError):
    """A trained emulator fell below the configured held-out R^2 floor."""


class ConfigError(EncalError, ValueError):
    """Run configuration is malformed or references missing files."""


class DegenerateTargetsWarning(UserWarning):
    """Emulator targets are constant; signal variance hit its floor."""


class ZeroAcceptanceWarning(UserWarning):
    """An MCMC chain accepted less than 1% of its proposals."""


class NoCaptureWarning(UserWarning):
    """A stimulated beat failed to propagate to any sensor."""
