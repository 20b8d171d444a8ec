"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


class DataError(RuntimeError):
    """Unreadable or inconsistent data on disk (exit code 3)."""


class TrainingAborted(RuntimeError):
    """Training stopped on a numerical failure such as a NaN loss (exit code 4)."""
