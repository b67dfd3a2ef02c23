"""Exception hierarchy for the solver."""


class FreezingError(Exception):
    """Base class for all errors raised by this package."""


class InvalidGridError(FreezingError, ValueError):
    pass


class NonFiniteError(FreezingError, FloatingPointError):
    pass


class SingularSystemError(FreezingError, ArithmeticError):
    """A small dense system (Gram matrix, Psi^T A) is singular to working precision."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


class NotSPDError(FreezingError, ValueError):
    pass


class StaleFactorError(FreezingError, RuntimeError):
    pass


class StepSizeError(FreezingError, RuntimeError):
    pass


class IntegrationError(FreezingError, RuntimeError):
    """Wraps a failure inside the time loop with the step count and time attached."""

    def __init__(self, message, step=None, tau=None):
        where = ""
        if step is not None:
            where = f" [step {step}, tau={tau:.6g}]"
        super().__init__(message + where)
        self.step = step
        self.tau = tau


class ConfigError(FreezingError, ValueError):
    pass
