"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Bad shape, mode index or value passed to a numerical routine."""


class NumericalFailureError(ArithmeticError):
    """Non-finite values or a routine that failed to converge."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer

    def __str__(self):
        msg = super().__str__()
        if self.layer is not None:
            return f"{msg} (layer {self.layer!r})"
        return msg


class ConfigurationError(ValueError):
    """A config document or hook target that cannot be resolved."""


class FormatError(ValueError):
    """Malformed TDF1 file or container."""
