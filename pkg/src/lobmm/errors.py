"""Exception types shared across the package.

The CLI maps :class:`ConfigError` and :class:`DataError` subclasses to
distinct exit codes, so new exceptions should derive from one of the
three roots below.
"""


class LobmmError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LobmmError):
    """Invalid run configuration. ``errors`` lists every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DataError(LobmmError):
    """Bad or inconsistent input data."""


# -- order book ---------------------------------------------------------------
class BookError(LobmmError, ValueError):
    pass


class UnknownOrder(BookError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateOrder(BookError):
    pass


class EmptySide(BookError):
    pass


# -- features / normalization ---------------------------------------------------
class ZeroMidpoint(DataError, ZeroDivisionError):
    pass


class InsufficientData(DataError):
    pass


# -- tick / snapshot files --------------------------------------------------------
class TickFormatError(DataError):
    pass


class MalformedHeader(TickFormatError):
    pass


class MalformedRow(TickFormatError):
    pass


class OutOfOrderTimestamp(TickFormatError):
    pass


class UnknownEventKind(TickFormatError):
    pass


class SchemaMismatch(DataError):
    pass


# -- environment ----------------------------------------------------------------------
class MissingNormalizer(DataError):
    pass


class EmptyDataset(DataError):
    pass


class SteppedAfterDone(LobmmError, RuntimeError):
    pass


# -- agents -------------------------------------------------------------------------------
class ShapeMismatch(LobmmError, ValueError):
    pass


class NonFiniteGradient(LobmmError, FloatingPointError):
    pass


class NonFiniteLoss(LobmmError, FloatingPointError):
    pass


class IncompatibleCheckpoint(DataError):
    pass
