"""
Exception hierarchy for the dynamic RWR engine.

Every failure raised by the package derives from ``RwrError`` so callers
(and the CLI) can separate engine errors from programming errors.
"""

from typing import Optional, TYPE_CHECKING

if TYPE_CHECKING:
    from .propagation import PropagationStats


class RwrError(Exception):
    """Base class for all dynamic RWR errors."""


class GraphUpdateError(RwrError, ValueError):
    """
    An update batch cannot be applied.

    Raised for strict-mode violations (duplicate insert, missing delete)
    and for operations referencing unknown or deleted nodes.
    """


class SeedDeletionError(GraphUpdateError):
    """A batch tried to delete the seed node of a tracker."""


class VectorShapeError(RwrError, ValueError):
    """Two vectors (or a vector and a graph) disagree on length."""


class ConvergenceError(RwrError, RuntimeError):
    """
    Propagation hit ``max_iterations`` before the tolerance was reached.

    Attributes:
        stats: Statistics gathered up to the point of failure
    """

    def __init__(self, message: str, stats: Optional["PropagationStats"] = None):
        super().__init__(message)
        self.stats = stats


class CorruptStateError(RwrError, RuntimeError):
    """A score vector is in a state no valid computation can produce."""


class ParseError(RwrError, ValueError):
    """
    Malformed line in an edge list, update stream or score dump.

    Attributes:
        line_number: 1-based line number of the offending line
    """

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class OracleSizeError(RwrError, ValueError):
    """The graph is too large for the dense reference solver."""


class UndefinedCorrelationError(RwrError, ValueError):
    """Rank correlation is undefined (an input has zero rank variance)."""
