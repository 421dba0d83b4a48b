"""Shared exception types."""


class DisasmkitError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(DisasmkitError):
    """A container could not be loaded; the message names the offending field."""


class UnsupportedArchitecture(LoadError):
    """The container targets a machine this package does not decode."""


class AddressError(DisasmkitError):
    """An address fell outside every mapped section."""


class ConfigError(DisasmkitError):
    """A strategy flag, value, or profile name was not recognized."""


class FormatError(DisasmkitError):
    """A ground-truth or result file violated the interchange grammar."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CfiParseError(DisasmkitError):
    """Call-frame information was truncated or inconsistent."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset:#x})")
        self.offset = offset
