"""Exception types shared across the package."""


class FBACError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FBACError, ValueError):
    """A parameter or grid violates a documented precondition."""


class InputError(FBACError, ValueError):
    """An input field, shape or test vector field is unusable."""


class NumericalError(FBACError, RuntimeError):
    """A computation produced non-finite values or failed to converge."""
