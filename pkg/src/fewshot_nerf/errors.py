"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataError(IOError):
    """Missing or malformed dataset / run directory (exit code 3)."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient (exit code 4)."""

    def __init__(self, message: str, breakdown: dict | None = None):
        self.breakdown = breakdown or {}
        super().__init__(message)
