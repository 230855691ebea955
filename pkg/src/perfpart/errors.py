"""Exception types raised by the library."""


class ValidationError(ValueError):
    """Parameters violate the model's standing assumptions."""


class DegenerateInputError(ValueError):
    """Inputs are valid but a formula divides by a quantity that vanishes."""


class CalibrationError(RuntimeError):
    """The share-count root search failed or has no solution."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class MomentOverflowError(OverflowError):
    """A log-space expectation exceeds the double-precision range."""


class CancellationError(ArithmeticError):
    """A moment transform lost all significant digits to cancellation."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k
