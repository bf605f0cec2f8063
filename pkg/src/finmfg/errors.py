"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class MFGError(Exception):
    """Base class for every error raised by :mod:`finmfg`."""


class DimensionError(MFGError, ValueError):
    """An array does not match the instance it is used with."""

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch on axis '{axis}': expected {expected}, got {got}")


class SimplexError(MFGError, ValueError):
    """A vector is not a probability vector within tolerance."""


class NumericDomainError(MFGError, ArithmeticError, ValueError):
    """A parameter or evaluated quantity lies outside its numeric domain."""


class UnsupportedModelError(MFGError, TypeError):
    """The operation needs a cost structure the model does not provide."""


class InfeasibleError(MFGError, ValueError):
    """Every candidate of an inner problem has infinite cost."""


class ConvergenceError(MFGError, RuntimeError):
    """An iterative method ran out of iterations.

    ``residual`` holds the last certificate value so callers can decide
    whether the partial answer is usable.
    """

    def __init__(self, message: str, residual: float, context: dict | None = None):
        self.residual = residual
        self.context = dict(context or {})
        if self.context:
            where = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} [{where}]"
        super().__init__(message)

    def with_context(self, **context) -> "ConvergenceError":
        merged = {**self.context, **context}
        base = str(self).split(" [")[0]
        return ConvergenceError(base, self.residual, merged)


class StateError(MFGError, RuntimeError):
    """An iterative state is not ready for the requested operation."""


class LipschitzError(MFGError, ValueError):
    """A test function violates the 1-Lipschitz constraint."""

    def __init__(self, pair: tuple[int, int], gap: float):
        self.pair = pair
        self.gap = gap
        super().__init__(
            f"test function is not 1-Lipschitz on pair {pair}: |f(x)-f(y)| exceeds d(x,y) by {gap:.3e}"
        )


class DomainError(MFGError, ValueError):
    """A continuous specification does not fit the requested discretization domain."""


class ConfigError(MFGError, ValueError):
    """An experiment configuration is malformed.

    ``field`` is the dotted path of the offending key.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
