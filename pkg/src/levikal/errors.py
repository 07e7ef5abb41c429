"""Exception types shared across the package."""


class LevikalError(Exception):
    """Base class for library errors."""


class InvalidParameter(LevikalError, ValueError):
    """A physical parameter or configuration field is out of range.

    The message names the offending field (dotted path for nested configs).
    """


class ConfigError(InvalidParameter):
    """A scenario configuration file failed validation."""


class SolverError(LevikalError, ArithmeticError):
    """A numerical routine failed to converge or met a singular system."""


class StabilityError(SolverError):
    """A computed closed loop is not asymptotically stable."""


class FitError(LevikalError, RuntimeError):
    """A spectral or calibration fit is underdetermined or inconsistent."""


class ProtocolError(LevikalError, ValueError):
    """A measurement protocol precondition does not hold."""
