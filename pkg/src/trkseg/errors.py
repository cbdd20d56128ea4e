"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError/OOVError -> 3, NumericAbort -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration or arguments."""


class DataError(RuntimeError):
    """Missing, corrupt, or inconsistent data on disk."""


class OOVError(ValueError):
    """A word is not present in the vocabulary."""

    def __init__(self, word: str):
        super().__init__(f"out-of-vocabulary word: {word!r}")
        self.word = word


class MissingTokenError(RuntimeError):
    """A required special token is absent from a sequence."""


class NumericAbort(RuntimeError):
    """A non-finite value was encountered during optimization."""
