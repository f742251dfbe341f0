"""Exception hierarchy shared by every verid module.

All data/model failures derive from :class:`VeridError` so the CLI can map
them to exit code 2 in one place.
"""


class VeridError(Exception):
    """Base class for data or model errors."""


# audio_io
class MalformedWav(VeridError):
    pass


class UnsupportedFormat(VeridError):
    pass


class EmptyAudio(VeridError):
    pass


class OffsetBeyondClip(VeridError):
    pass


class ParseError(VeridError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DuplicatePath(VeridError):
    pass


# dsp
class WrongLength(VeridError):
    pass


class TooShort(VeridError):
    pass


# nn
class ShapeMismatch(VeridError):
    pass


class MissingCache(VeridError):
    pass


class BatchTooSmall(VeridError):
    pass


class LabelOutOfRange(VeridError):
    pass


class InvalidLabel(VeridError):
    pass


class SpecMismatch(VeridError):
    pass


# training
class TooFewSpeakers(VeridError):
    pass


# verification
class NoEmbeddings(VeridError):
    pass


class ZeroVector(VeridError):
    pass


class DimMismatch(VeridError):
    pass


class EmptySide(VeridError):
    pass


class Infeasible(VeridError):
    pass


# gmm
class TooFewFrames(VeridError):
    pass
