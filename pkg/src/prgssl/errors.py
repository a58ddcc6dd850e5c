class InvalidParameterError(ValueError):
    pass


class InfeasibleSpecError(ValueError):
    pass


class EmptyWindowError(RuntimeError):
    pass


class DegenerateProductError(ArithmeticError):
    """Hadamard product of weights and probabilities is identically zero."""


class NonFiniteGradientError(FloatingPointError):
    pass


class RunError(RuntimeError):
    """Wraps a failure inside a training run with the iteration it occurred at."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause
