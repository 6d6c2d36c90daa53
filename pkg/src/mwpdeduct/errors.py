"""Exception hierarchy; the CLI maps these onto exit codes."""


class ConfigError(Exception):
    """Bad or missing configuration (exit code 2)."""


class DataError(Exception):
    """Unusable input data (exit code 3)."""


class RuntimeFailure(Exception):
    """Failure during compute (exit code 4)."""
