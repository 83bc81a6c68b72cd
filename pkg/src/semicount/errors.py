"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration value is outside its documented range."""


class InputError(ValueError):
    """An input array, scene or file violates a documented precondition."""


class NumericsError(RuntimeError):
    """Training or inference produced non-finite numbers."""
