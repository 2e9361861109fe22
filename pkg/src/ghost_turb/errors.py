"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, tolerance failures with 1, statistically undecidable results
with 3.
"""


class ValidationError(ValueError):
    """A physical parameter or input array is outside its valid domain."""


class ConfigurationError(ValueError):
    """A grid, file, or run configuration is inconsistent or unusable."""


class InsufficientDataError(RuntimeError):
    """Too few samples to produce the requested statistical result."""


class NoDetectionError(RuntimeError):
    """An image has no statistically significant, resolvable peak."""
