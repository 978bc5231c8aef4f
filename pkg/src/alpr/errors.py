"""Exception types shared across the package.

The CLI maps each class to a distinct exit code.
"""


class AlprError(Exception):
    exit_code = 1


class ConfigError(AlprError, ValueError):
    """Malformed or inconsistent network / rules configuration."""

    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelError(AlprError):
    """Weights missing, truncated, or incompatible with the layer graph."""

    exit_code = 4


class DataError(AlprError, ValueError):
    """Bad annotations, results, images or manifests."""

    exit_code = 5


class ValidationError(AlprError, ValueError):
    exit_code = 6
