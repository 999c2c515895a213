"""Exception hierarchy shared across the package."""


class FvolError(Exception):
    """Base class for every error raised by fvol."""


class MismatchedLength(FvolError, ValueError):
    pass


class MismatchedGrid(FvolError, ValueError):
    pass


class NonUniformGrid(FvolError, ValueError):
    pass


class GridTooShort(FvolError, ValueError):
    pass


class NonPositivePrice(FvolError, ValueError):
    pass


class TooShort(FvolError, ValueError):
    pass


class EmptyDataset(FvolError, ValueError):
    pass


class KTooLarge(FvolError, ValueError):
    pass


class OutOfSupport(FvolError, ValueError):
    pass


class NoNeighbors(FvolError, ValueError):
    """A kernel-weighted average has an empty neighbourhood (zero denominator).

    ``index`` is the offending evaluation point (row of the weight matrix)
    when known; ``context`` carries caller-supplied location details such as a
    replication number or a calendar date.
    """

    def __init__(self, message, index=None, context=None):
        super().__init__(message)
        self.index = index
        self.context = context


class CompleteModeOnIncompleteData(FvolError, ValueError):
    pass


class MissingFittedValue(FvolError, ValueError):
    pass


class DegenerateVarianceAtObservation(FvolError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EmptyBall(FvolError, ValueError):
    pass


class NonPositivePlugin(FvolError, ValueError):
    pass


class AllDistancesZero(FvolError, ValueError):
    pass


class NoFeasibleCandidate(FvolError, ValueError):
    pass


class ZeroDenominator(FvolError, ZeroDivisionError):
    pass


class EmptyRecords(FvolError, ValueError):
    pass


class EmptySeries(FvolError, ValueError):
    pass


class SchemaError(FvolError, ValueError):
    pass


class NoOverlappingDates(FvolError, ValueError):
    pass
