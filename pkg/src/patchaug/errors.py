"""Exception hierarchy.

Every error raised by the library derives from :class:`PatchAugError`.  The
four intermediate classes map one-to-one onto the CLI exit codes
(config 2, data 3, numeric 4, io 5).
"""


class PatchAugError(Exception):
    """Base class for all library errors."""


class ConfigError(PatchAugError, ValueError):
    pass


class DataError(PatchAugError, ValueError):
    pass


class NumericError(PatchAugError, ArithmeticError):
    pass


class StorageError(PatchAugError, OSError):
    pass


# tensor-level argument errors are data errors from the CLI's point of view
class ShapeError(DataError):
    """Operand shapes are incompatible (``shape-mismatch`` / ``invalid-shape``)."""


class InvalidRangeError(DataError):
    pass


class NotScalarError(ShapeError):
    pass


class GeometryError(DataError):
    """Image geometry does not fit the model or the dataset."""


class EmptyDatasetError(DataError):
    pass


class MissingClassDirectoryError(DataError):
    pass


class MixedGeometryError(GeometryError):
    pass


class UnreadableFileError(DataError):
    pass


class ClassTooSmallError(DataError):
    pass


class SingleClassDatasetError(DataError):
    pass


class MissingGeneratorError(DataError):
    pass


class TooFewSamplesError(DataError):
    pass


class NotSymmetricError(NumericError):
    pass


class NoConvergenceError(NumericError):
    pass


class NonFiniteError(NumericError):
    """A loss or statistic became NaN/Inf."""


class RelativeIncreaseUndefined(NumericError, ZeroDivisionError):
    pass


class CheckpointError(StorageError):
    pass


class CorruptManifestError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass
