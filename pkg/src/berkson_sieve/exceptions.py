"""Exception types shared across the package.

The CLI maps :class:`ConfigError` (and plain ``ValueError``) to exit code 1
and :class:`NumericalError` to exit code 2.
"""


class ConfigError(ValueError):
    """Invalid user input: bad config key, malformed file, unusable option."""


class NumericalError(ArithmeticError):
    """A computation could not be carried out to the required accuracy."""


class InfeasibleStartError(NumericalError):
    """The optimizer was handed a starting point with no finite objective."""


class RankDeficientError(NumericalError):
    """A least-squares design matrix does not have full column rank."""
