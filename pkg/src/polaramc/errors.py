"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """Input is well-formed but carries no usable signal (e.g. zero power)."""


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    """Operation called out of order, e.g. backward before forward."""


class DataError(RuntimeError):
    """Missing, corrupt or mismatched dataset / checkpoint on disk."""


class NumericError(ArithmeticError):
    """Training diverged (NaN or infinite loss)."""
