"""Exceptions and warnings raised by `slisphere`."""


class SliSphereError(Exception):
    """Base class of every error raised by the package."""


class InvalidResolutionError(SliSphereError, ValueError):
    pass


class PixelIndexError(SliSphereError, IndexError):
    pass


class InvalidAngleError(SliSphereError, ValueError):
    pass


class NoParentError(SliSphereError, ValueError):
    pass


class CentroidUndefinedError(SliSphereError, ValueError):
    pass


class RankError(SliSphereError, ValueError):
    pass


class InputError(SliSphereError, ValueError):
    pass


class UndefinedCorrelationError(SliSphereError, ValueError):
    pass


class UndefinedMetricError(SliSphereError, ValueError):
    pass


class ContractError(SliSphereError, ValueError):
    pass


class FormatError(SliSphereError, ValueError):
    pass


class ConfigError(SliSphereError, ValueError):
    pass


class NumericalError(SliSphereError, ArithmeticError):
    pass


class CoverageGapWarning(UserWarning):
    """A masked-in pixel has no raster sample close enough to interpolate."""


class DegenerateKernelWarning(UserWarning):
    """A fibre kernel vanishes on the measurement cap."""


class DisconnectedGraphWarning(UserWarning):
    pass


class NegativeWeightWarning(UserWarning):
    pass


class CorrelationSubstitutionWarning(UserWarning):
    """A Pearson term was replaced by zero because a signal had no variance."""


class NonConvergenceWarning(UserWarning):
    pass
