"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation and parse problems exit 2,
transport problems (external scorer process, unreadable streams) exit 3,
anything else exits 4.
"""


class PartwiseError(Exception):
    pass


class ValidationError(PartwiseError):
    """Bad inputs: malformed values, violated preconditions, inconsistent files."""


class ParseError(ValidationError):
    """Malformed text input; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValidationError):
    """Invalid configuration value or file."""


class TransportError(PartwiseError):
    """External process or I/O channel failed."""
