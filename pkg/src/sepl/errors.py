"""Exception hierarchy shared by every module."""


class SeplError(Exception):
    pass


class DimensionMismatch(SeplError, ValueError):
    pass


class ShapeMismatch(SeplError, ValueError):
    pass


class EmptyList(SeplError, ValueError):
    pass


class ClassOutOfRange(SeplError, ValueError):
    pass


class ClassCountMismatch(SeplError, ValueError):
    pass


class EmptySlice(SeplError, ValueError):
    pass


class ThresholdOutOfRange(SeplError, ValueError):
    pass


class InvalidScores(SeplError, ValueError):
    pass


class MalformedRle(SeplError, ValueError):
    pass


class MalformedRecord(SeplError, ValueError):
    pass


class AreaMismatch(MalformedRecord):
    pass


class UnreadableFile(SeplError, OSError):
    pass


class UnsupportedPngDepth(SeplError, ValueError):
    pass


class ManifestError(SeplError, ValueError):
    pass


class InfeasibleSpec(SeplError, ValueError):
    pass


class MissingPair(SeplError, KeyError):
    pass
