"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration 2, data 3, numeric 4.
"""


class ConfigurationError(Exception):
    """Invalid or inconsistent configuration (shapes, profiles, flags)."""


class CheckpointMismatchError(ConfigurationError):
    """Checkpoint incompatible with the target model configuration."""

    def __init__(self, fields, message=None):
        self.fields = list(fields)
        super().__init__(message or f"checkpoint/config mismatch in fields: {', '.join(self.fields)}")


class DataError(Exception):
    """Missing or malformed input data (frames, manifests, corpora)."""


class NumericError(Exception):
    """Non-finite values encountered during computation."""
