"""Exception types raised across the package."""


class ConformalBanditsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ConformalBanditsError, ValueError):
    """Invalid model, policy or scenario parameters."""


class InsufficientDataError(ConformalBanditsError, ValueError):
    """Not enough observations to carry out the requested computation."""


class InvalidIndexError(ConformalBanditsError, ValueError):
    """Selection indices cannot be resolved into an arm (e.g. all NaN)."""


class IngestionError(ConformalBanditsError, ValueError):
    """Price data could not be parsed or failed validation."""


class SolverError(ConformalBanditsError, ArithmeticError):
    """A linear system or optimisation could not be solved."""
