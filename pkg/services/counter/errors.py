"""
Error hierarchy shared by every package of the counting service.

Each class carries the process exit code the CLI returns when the error
escapes a subcommand. Narrower errors live next to the code that raises them
and subclass one of these.
"""


class CounterError(Exception):
    """Base class for all service errors"""
    exit_code: int = 1


class ConfigurationError(CounterError):
    """Raised when a configuration value or combination is invalid"""
    exit_code = 2


class DataError(CounterError):
    """Raised when a dataset, sample or file on disk is unusable"""
    exit_code = 3


class NumericError(CounterError):
    """Raised when a computation produces NaN/Inf from finite inputs"""
    exit_code = 4
