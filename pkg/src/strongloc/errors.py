"""Exception types shared across the package."""


class StronglocError(Exception):
    """Base class for all package errors."""


class ConfigError(StronglocError, ValueError):
    """Invalid configuration, dimension mismatch or out-of-range setting."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DomainError(StronglocError, ValueError):
    """Evaluation point outside the problem domain."""


class NonFiniteError(StronglocError, FloatingPointError):
    """A graph node produced a non-finite value."""

    def __init__(self, message, node=None, tag=None):
        super().__init__(message)
        self.node = node
        self.tag = tag


class DivergenceError(StronglocError, FloatingPointError):
    """Training produced a non-finite loss, gradient or energy."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


class NonConvergenceError(StronglocError, RuntimeError):
    """A solve did not reach its stopping criterion."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
