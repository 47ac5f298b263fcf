"""Exception types shared across the package."""


class MonoFlowError(Exception):
    pass


class NotPositiveDefinite(MonoFlowError, ValueError):
    pass


class NumericOverflow(MonoFlowError, ArithmeticError):
    pass


class DomainError(MonoFlowError, ValueError):
    pass


class NotMonotone(MonoFlowError, ValueError):
    pass


class Unbounded(MonoFlowError, ValueError):
    pass


class NoInteriorMaximum(MonoFlowError, ValueError):
    pass


class ConfigError(MonoFlowError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
