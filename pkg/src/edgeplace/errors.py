"""Exception types shared across the package."""


class ConfigError(Exception):
    """Raised for malformed or inconsistent configuration input."""


class TrainingError(Exception):
    """Raised when classifier training produces a non-finite loss."""
