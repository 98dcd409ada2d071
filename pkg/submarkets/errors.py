"""Exception types shared across the package.

Data problems (bad input files, undefined statistics) derive from DataError,
numerical failures of the fitting machinery from NumericalError. The CLI maps
the two families to distinct exit codes.
"""


class SubmarketError(Exception):
    """Base class for all errors raised by submarkets."""


class DataError(SubmarketError, ValueError):
    """Input data is malformed or does not support the requested statistic."""


class ParseError(DataError):
    """A line of an input file could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateEdgeError(DataError):
    """An edge appeared twice while duplicates were not allowed."""


class UndefinedScoreError(DataError):
    """Modularity was requested for a graph without edge weight."""


class UndefinedFractionError(DataError):
    """A fraction was requested over an empty set of records."""


class OracleLimitError(DataError):
    """Exact enumeration was requested beyond its state-space limit."""


class NumericalError(SubmarketError, ArithmeticError):
    """The numerical machinery reached a degenerate state."""


class DenseRegimeError(NumericalError):
    """A generator mean exceeds the sparse-model cap."""


class RenormalizationError(NumericalError):
    """A message could not be normalized."""


class DegenerateEdgeError(NumericalError):
    """A two-node marginal has a zero normalizer."""


class DegenerateFitError(NumericalError):
    """Every restart of a fit collapsed."""
