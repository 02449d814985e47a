"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`AugforgeError`.
The CLI maps :class:`ValidationError` to exit code 1 and :class:`IoError` to
exit code 2.
"""


class AugforgeError(Exception):
    pass


class ValidationError(AugforgeError, ValueError):
    """Input violates a documented contract."""


class IoError(AugforgeError, OSError):
    """A file could not be read, decoded or written."""


# scene_io
class DimensionMismatch(ValidationError):
    pass


class MalformedAnnotation(ValidationError):
    pass


class InvalidDepth(ValidationError):
    pass


class DecodeError(IoError):
    pass


# augment_kernels
class InvalidParams(ValidationError):
    pass


class MissingSegmap(ValidationError):
    pass


class SpaceTooSmall(ValidationError):
    pass


# metrics
class NoGroundTruth(ValidationError):
    pass


class NoPredictions(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


# search
class UnknownMetric(ValidationError):
    pass


class BudgetExceeded(ValidationError):
    pass


# latent
class Diverged(ValidationError):
    pass


class MissingEmbeddings(IoError):
    pass


# strategy
class EmptyDataset(ValidationError):
    pass


class InfeasibleRatio(ValidationError):
    pass


class UnevenAugCount(ValidationError):
    pass


class InvalidAlpha(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class TooFewItems(ValidationError):
    pass


# experiment
class DuplicateRun(ValidationError):
    pass


class CorruptLedger(DecodeError):
    pass


class TooFewSamples(ValidationError):
    pass


class AllZeroDifferences(ValidationError):
    pass


class MissingCells(ValidationError):
    pass
