"""Exception types shared across the package."""


class NVStrainError(Exception):
    """Base class for package errors."""


class ConfigError(NVStrainError, ValueError):
    """Invalid configuration or scene description (CLI exit code 2)."""


class NumericalFailure(NVStrainError, RuntimeError):
    """A numerical routine failed to converge (CLI exit code 3)."""


class ConvergenceError(NumericalFailure):
    """Step halving changed a propagator beyond tolerance."""


class FitError(NumericalFailure):
    """A least-squares fit did not converge or the data were degenerate."""


class AmbiguityError(NVStrainError, ValueError):
    """A visibility cannot be mapped to a unique frequency shift."""
