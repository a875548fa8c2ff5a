"""Exception types raised across the package."""


class ToVError(Exception):
    """Base class for all package errors."""


class SizeError(ToVError, ValueError):
    pass


class DimensionError(ToVError, ValueError):
    pass


class DimensionCapError(ToVError, ValueError):
    """Raised when an exact Hessian is requested for a model that is too large."""


class EmptySetError(ToVError, ValueError):
    pass


class EpsilonRangeError(ToVError, ValueError):
    pass


class SingularHessianError(ToVError, ArithmeticError):
    pass


class RankError(ToVError, ArithmeticError):
    pass


class DegenerateError(ToVError, ValueError):
    pass


class ConfigError(ToVError, ValueError):
    pass
