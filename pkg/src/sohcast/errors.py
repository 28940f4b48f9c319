"""Exception hierarchy.

Every domain error derives from :class:`SohError`; the CLI turns these into a
single ``error: <Name>: <message>`` line and exit code 1.
"""


class SohError(Exception):
    """Base class for all domain errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ingest
class MissingColumn(SohError):
    pass


class EmptySource(SohError):
    pass


class MixedSerial(SohError):
    pass


class TooManyParseFailures(EmptySource):
    """More than half the rows failed to parse."""


class AllDropped(SohError):
    pass


# derive
class InsufficientSamples(SohError):
    pass


class NonpositiveC0(SohError):
    pass


class NonpositiveNominal(SohError):
    pass


# stats / arima / eval (shared)
class TooShort(SohError):
    pass


class MissingHistory(SohError):
    pass


class ZeroVariance(SohError):
    pass


class SingularRegression(SohError):
    pass


class AllZeroDifferences(SohError):
    pass


class LengthMismatch(SohError):
    pass


class NonInvertible(SohError):
    pass


class DegenerateSeries(SohError):
    pass


class InvalidOrder(SohError):
    pass


# ensemble
class EmptyData(SohError):
    pass


class WidthMismatch(SohError):
    pass


# eval
class ZeroVarianceTarget(SohError):
    """Target has zero variance; ``metrics`` still carries the RMSE."""

    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics


class TooFewRows(SohError):
    pass


class EmptyGrid(SohError):
    pass


class NoMonths(SohError):
    pass


# fleet
class NoEligibleBatteries(SohError):
    pass


# synth / cli
class InvalidConfig(SohError):
    pass


class BadConfig(SohError):
    pass


class UnknownSubcommand(SohError):
    pass
