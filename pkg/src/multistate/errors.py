"""Exception hierarchy shared across the pipeline.

Every error carries a short machine-readable category that the CLI maps to
an exit code and prints alongside the message.
"""


class AnalysisError(Exception):
    """Base class for all pipeline failures."""

    category = "internal"
    exit_code = 1


class ConfigError(AnalysisError):
    """Invalid or missing configuration."""

    category = "config"
    exit_code = 2


class DataError(AnalysisError):
    """Malformed or inconsistent input data."""

    category = "data"
    exit_code = 3


class BudgetError(AnalysisError):
    """Too many rejected input rows to continue."""

    category = "validation-budget"
    exit_code = 4
