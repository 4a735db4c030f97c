"""Exception hierarchy.  Every error raised by lbphface derives from FaceError."""


class FaceError(Exception):
    pass


# image codec / pixel ops
class BadMagic(FaceError, ValueError):
    pass


class UnsupportedMaxval(FaceError, ValueError):
    pass


class Truncated(FaceError, ValueError):
    pass


class ZeroDimension(FaceError, ValueError):
    pass


class OutOfBounds(FaceError, IndexError):
    pass


class ImageSmallerThanGrid(FaceError, ValueError):
    pass


# cascade parsing / detection
class MalformedXml(FaceError, ValueError):
    pass


class UnsupportedFeature(FaceError, ValueError):
    pass


class MissingElement(FaceError, ValueError):
    pass


class ImageTooSmall(FaceError, ValueError):
    pass


class NoFaceFound(FaceError):
    pass


# lbph
class ChipTooSmall(FaceError, ValueError):
    pass


class GridDegenerate(FaceError, ValueError):
    pass


class LengthMismatch(FaceError, ValueError):
    pass


class EmptyTrainingSet(FaceError, ValueError):
    pass


class MixedChipSizes(FaceError, ValueError):
    pass


class EmptyModel(FaceError, ValueError):
    pass


class ChipSizeMismatch(FaceError, ValueError):
    pass


class InsufficientSamples(FaceError, ValueError):
    pass


# database / persistence
class NoUnderscore(FaceError, ValueError):
    pass


class EmptyNameSet(FaceError, ValueError):
    pass


class IllegalName(FaceError, ValueError):
    pass


class MalformedLine(FaceError, ValueError):
    pass


class InvariantViolation(FaceError, ValueError):
    pass


class EmptyStore(FaceError, ValueError):
    pass


class BadHeader(FaceError, ValueError):
    pass


class VersionUnsupported(FaceError, ValueError):
    pass


class Corrupt(FaceError, ValueError):
    pass


# evaluation
class DatasetTooSmall(FaceError, ValueError):
    pass
