"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation/configuration problems
exit with 2, numerical failures with 3, convergence failures with 4.
"""


class CarlevelError(Exception):
    """Base class for all package errors."""


class ValidationError(CarlevelError):
    """Malformed inputs: graphs, datasets, flags, file formats."""


class ConfigurationError(CarlevelError):
    """Inconsistent run configuration (iterations, thinning, chains)."""


class NumericalError(CarlevelError):
    """Numerical failure (non-positive-definite system, NaN in a sweep)."""


class ConvergenceError(CarlevelError):
    """Chains failed the convergence gate after all retries."""
