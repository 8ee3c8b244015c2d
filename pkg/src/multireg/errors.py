"""Exception types raised across the package."""


class MultiRegError(ValueError):
    pass


class DegenerateConfiguration(MultiRegError):
    pass


class EmptyModel(MultiRegError):
    pass


class NonPositiveVoxel(MultiRegError):
    pass


class EmptySuperpoints(MultiRegError):
    pass


class KTooLarge(MultiRegError):
    pass


class ShapeMismatch(MultiRegError):
    pass


class EmptyFeatures(MultiRegError):
    pass


class EmptySide(MultiRegError):
    pass


class TooFewCorrespondences(MultiRegError):
    pass


class EmptyCorrespondences(MultiRegError):
    pass


class NoPositives(MultiRegError):
    pass


class NoNegatives(MultiRegError):
    pass


class IndexOutOfRange(MultiRegError):
    pass


class LengthMismatch(MultiRegError):
    pass


class ModelLoadFailure(MultiRegError):
    pass


class ConfigError(MultiRegError):
    pass
