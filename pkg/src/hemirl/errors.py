"""Exception taxonomy shared across the package.

Three failure classes map onto the CLI exit codes: configuration problems
(bad config files, mismatched dimensions, missing checkpoints) and usage
problems exit 1; numeric failures mid-training exit 2.
"""


class ConfigurationError(Exception):
    """A config value, dimension, or required artifact is wrong or missing."""


class UsageError(Exception):
    """An API was called outside its contract (wrong shape, wrong order)."""


class NumericError(Exception):
    """NaN/Inf appeared where finite values are required; the step is aborted."""
