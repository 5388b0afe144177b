"""Exception types shared across the package.

The CLI maps these onto process exit codes: :class:`ConfigError` -> 1,
:class:`NumericalFailure` -> 2, :class:`BudgetExceeded` -> 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalFailure(ArithmeticError):
    """Singular system or non-finite values encountered."""


class BudgetExceeded(RuntimeError):
    """A dense/exhaustive computation would exceed its size budget."""
