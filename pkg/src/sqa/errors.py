"""Exception hierarchy shared across the toolkit."""


class SqaError(Exception):
    """Base class for all toolkit errors."""


# audio_io
class UnsupportedFormat(SqaError):
    pass


class CorruptFile(SqaError):
    pass


class EmptyAudio(SqaError):
    pass


# features
class SegmentTooShort(SqaError):
    pass


# nn / model
class ShapeMismatch(SqaError):
    pass


class ConfigInvalid(SqaError):
    pass


class DataUnavailable(SqaError):
    pass


class DivergedLoss(SqaError):
    pass


class FormatVersionMismatch(SqaError):
    pass


class ChecksumFailure(SqaError):
    pass


# dataset
class ParseError(SqaError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DuplicateClipId(SqaError):
    pass


class IoFailure(SqaError):
    pass


# evaluation
class DegenerateInput(SqaError):
    pass


class TooFewGroups(SqaError):
    pass


class RankDeficient(SqaError):
    pass
