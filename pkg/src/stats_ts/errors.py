"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's preconditions (shape, range, sign)."""


class NumericError(ArithmeticError):
    """A computation produced or would produce a non-finite value."""

    def __init__(self, message, op=None):
        super().__init__(message)
        self.op = op


class DegenerateSpectrumError(NumericError):
    """Spectral mass is undefined because the input carries zero power."""


class PreconditionError(ContractError):
    """The hypothesis of a bound does not hold for the supplied arguments."""


class SamplingError(RuntimeError):
    """Too many reverse-diffusion chains produced non-finite values."""


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold."""
