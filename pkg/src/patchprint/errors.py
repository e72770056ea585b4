"""Exception hierarchy shared by every patchprint module."""


class PatchprintError(Exception):
    """Base class for all library errors."""


class UnsupportedFormatError(PatchprintError, ValueError):
    pass


class CorruptDataError(PatchprintError, ValueError):
    pass


class PatchTooLargeError(PatchprintError, ValueError):
    pass


class EmptyInputError(PatchprintError, ValueError):
    pass


class KTooLargeError(PatchprintError, ValueError):
    pass


class ShapeMismatchError(PatchprintError, ValueError):
    pass


class NotScalarError(PatchprintError, ValueError):
    pass


class MissingGradientError(PatchprintError, RuntimeError):
    pass


class ParseError(PatchprintError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownLabelError(ParseError):
    pass


class SingleClassDatasetError(PatchprintError, ValueError):
    pass


class BadMagicError(PatchprintError, ValueError):
    pass


class VersionMismatchError(PatchprintError, ValueError):
    pass


class CheckpointIOError(PatchprintError, OSError):
    """Raised for unreadable or truncated checkpoint files."""
