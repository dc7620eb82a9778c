"""Exception types shared across the package."""


class LagstepError(Exception):
    """Base class for all errors raised by lagstep."""


class ConfigurationError(LagstepError, ValueError):
    """A model, delay line or scenario was set up inconsistently."""


class InputError(LagstepError, ValueError):
    """A supplied signal or matrix contains non-finite values."""


class RangeError(LagstepError, IndexError):
    """A query fell outside the stored window or the spatial domain."""


class NumericError(LagstepError, ArithmeticError):
    """Evaluation produced a non-finite value.

    Attributes:
        state: state vector at which the evaluation failed, if known.
        inputs: input vector at which the evaluation failed, if known.
    """

    def __init__(self, message, state=None, inputs=None):
        super().__init__(message)
        self.state = state
        self.inputs = inputs


class DivergenceError(NumericError):
    """Predictor or transform integration blew up.

    ``position`` is the spatial coordinate x in [0, D_max] at which the
    profile first became non-finite or exceeded the divergence bound. For a
    predictor computed at time ``t`` this corresponds to the predicted
    instant ``t + position``.
    """

    def __init__(self, message, position, time=None, state=None):
        super().__init__(message, state=state)
        self.position = position
        self.time = time
