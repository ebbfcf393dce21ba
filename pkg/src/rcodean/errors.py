"""Exception types shared across the package."""


class RCodeanError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RCodeanError, ValueError):
    """Operand shapes are incompatible. Broadcasting is never implied."""


class NumericError(RCodeanError, ValueError):
    """A value that must be finite is NaN or infinite."""


class ConfigError(RCodeanError, ValueError):
    """Invalid or inconsistent configuration."""


class InputError(RCodeanError, ValueError):
    """An input sample violates a documented precondition."""


class UsageError(RCodeanError, ValueError):
    """API or CLI misuse, e.g. predicting with an untrained bundle."""


class TrainingError(RCodeanError, RuntimeError):
    """Training cannot proceed (bad gradients, too few samples)."""


class FormatError(RCodeanError, ValueError):
    """A file does not follow its declared binary or text layout."""


class ParseError(FormatError):
    """Malformed text record; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CorruptionError(FormatError):
    """Checksum mismatch while reading a serialized artifact."""


class VersionError(FormatError):
    """Serialized artifact has an unsupported format version."""
