"""Exception hierarchy shared by every module."""


class StarError(Exception):
    """Base class for all package errors."""


class DimensionError(StarError, ValueError):
    pass


class ContractError(StarError, RuntimeError):
    pass


class NonFiniteError(StarError, FloatingPointError):
    pass


class TargetIndexError(StarError, IndexError):
    pass


class LayoutError(StarError, ValueError):
    pass


class DataError(StarError, ValueError):
    pass


class ConfigError(StarError, ValueError):
    pass


class ValidationError(StarError, ValueError):
    pass


class CompatibilityError(StarError, ValueError):
    """Checkpoint does not match the model/config it is loaded into."""
