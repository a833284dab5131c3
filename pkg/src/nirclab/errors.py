"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and parse
problems exit with 2, training divergence exits with 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unusable run setup."""


class ParseError(ConfigError):
    """Scene description failed to parse; carries line information."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class InvalidSampleError(ValueError):
    """A training sample violated a precondition (e.g. pdf <= 0)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, snapshot_path=None):
        self.snapshot_path = snapshot_path
        super().__init__(message)
