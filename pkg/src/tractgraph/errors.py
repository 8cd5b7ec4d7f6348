"""Exception types shared across the package.

The CLI maps ConfigError/InputError to exit code 2 (bad configuration or
input data) and everything else to exit code 1 (internal failure).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, out-of-range knobs, missing sections."""


class InputError(ValueError):
    """Invalid input data: malformed files, duplicate ids, inconsistent records."""


class TrainingError(RuntimeError):
    """Training aborted, e.g. a non-finite loss or gradient."""
