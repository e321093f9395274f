"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An input violated an operation's precondition."""


class ConfigurationError(ValueError):
    """Parameters or configuration are missing, misnamed, or mis-shaped."""


class GenerationError(RuntimeError):
    """The scene generator could not satisfy its configuration."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""
