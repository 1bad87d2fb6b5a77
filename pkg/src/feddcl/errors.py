"""Exception taxonomy shared by every module of the package."""


class FeddclError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(FeddclError, ValueError):
    """An argument violates a documented precondition."""


class DataError(FeddclError, ValueError):
    """Input data is malformed or out of contract (non-finite, bad labels, ...)."""


class ParseError(DataError):
    """A file cell could not be parsed; message carries row/column context."""


class FormatError(DataError):
    """A binary file does not match its declared format (magic, counts)."""


class NumericError(FeddclError, ArithmeticError):
    """A numerical kernel failed (non-convergence, non-finite loss, singular mask)."""


class ConfigError(FeddclError, ValueError):
    """A run configuration is invalid; message carries the field path."""


class AggregationError(FeddclError, ValueError):
    """Models passed to an aggregation step are not compatible."""


class ProtocolError(FeddclError, RuntimeError):
    """A protocol run aborted; carries the failing stage and the ledger so far.

    Attributes:
        stage: label of the protocol stage that failed.
        ledger: the communication ledger accumulated up to the failure,
            or None when the failure happened before any message was sent.
    """

    def __init__(self, stage: str, message: str, ledger=None):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.ledger = ledger
