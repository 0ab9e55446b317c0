class GlmcfError(Exception):
    pass


class ConfigError(GlmcfError, ValueError):
    """Bad or missing configuration (CLI exit code 2)."""


class NumericalError(GlmcfError, ArithmeticError):
    """Numerical failure (CLI exit code 3)."""


class NonPositiveMetricError(NumericalError, ValueError):
    pass


class NonClosedFormError(NumericalError, ValueError):
    pass


class JacobiConvergenceError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class MaximumPrincipleViolation(NumericalError):
    pass


class WindowError(ValueError):
    pass
