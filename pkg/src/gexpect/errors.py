"""Exception hierarchy.

The CLI maps :class:`ValidationError` to exit status 2 and
:class:`NumericalError` to exit status 1.
"""


class ValidationError(ValueError):
    """Bad input: malformed config, non-admissible family, invalid parameters."""


class NumericalError(RuntimeError):
    """A numerical procedure cannot run as requested."""


class CFLViolation(NumericalError):
    pass


class SupportCapExceeded(NumericalError):
    pass


class BudgetExceeded(NumericalError):
    """Brute-force enumeration is above its configured budget."""
