"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, dependency 3,
numerics 4); library callers can catch them individually.
"""


class ExoadaptError(Exception):
    """Base class for package errors."""


class ConfigError(ExoadaptError):
    """Invalid or inconsistent experiment configuration."""


class DependencyError(ExoadaptError):
    """A required upstream artifact (file, model, dataset) is missing."""


class NumericalDivergence(ExoadaptError):
    """An integrator or training loop produced non-finite state."""
