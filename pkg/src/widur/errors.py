"""Exception hierarchy shared by all widur modules."""


class WidurError(Exception):
    """Base class for every error raised by this package."""


# -- file formats -----------------------------------------------------------

class CsiFormatError(WidurError, ValueError):
    """A trace, manifest, label or feature file could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MalformedHeader(CsiFormatError):
    pass


class NonMonotonicTimestamp(CsiFormatError):
    pass


class NonFiniteValue(CsiFormatError):
    pass


class IrregularSpacing(CsiFormatError):
    pass


class UnknownLabel(CsiFormatError):
    pass


class IntervalOutOfRange(CsiFormatError):
    pass


class OverlappingIntervals(CsiFormatError):
    pass


# -- numerics ---------------------------------------------------------------

class SeriesTooShort(WidurError, ValueError):
    pass


class SegmentTooShort(SeriesTooShort):
    pass


class EmptySpectrogram(WidurError, ValueError):
    pass


class NonFiniteInput(WidurError, ValueError):
    pass


class DegenerateInputWarning(UserWarning):
    """PCA input had zero covariance; a neutral result was returned."""


# -- learning ---------------------------------------------------------------

class EmptyDataset(WidurError, ValueError):
    pass


class SingleClass(WidurError, ValueError):
    pass


class LengthMismatch(WidurError, ValueError):
    pass


class EmptyInput(WidurError, ValueError):
    pass


class NoConvergence(WidurError, RuntimeError):
    def __init__(self, pair, iterations):
        self.pair = pair
        self.iterations = iterations
        super().__init__(
            f"SMO did not converge for class pair {pair} "
            f"after {iterations} passes")


class FrozenViolation(WidurError, AssertionError):
    pass


class ConfigError(WidurError, ValueError):
    pass


class ConfigInfeasible(ConfigError):
    pass
