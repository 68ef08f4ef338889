"""Exception hierarchy shared by all workgraph modules."""


class WorkgraphError(Exception):
    """Base class for errors raised by workgraph."""


class DataError(WorkgraphError, ValueError):
    """Malformed or inconsistent input data (files, records, graphs)."""


class KGFormatError(DataError):
    """A knowledge-graph edge list could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class NumericalError(WorkgraphError, ArithmeticError):
    """A NaN or infinite value appeared in a forward or backward pass."""
