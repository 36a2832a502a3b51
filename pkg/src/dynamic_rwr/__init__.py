"""
Random walk with restart on dynamic graphs.

Scores are computed once with cumulative power iteration and then kept
current under edge and node updates by offset score propagation.
"""

from .config import DeadEndMode, PropagationConfig, RunConfig, TrackerOptions
from .errors import (
    ConvergenceError,
    CorruptStateError,
    GraphUpdateError,
    ParseError,
    RwrError,
    SeedDeletionError,
    VectorShapeError,
)
from .graph_store import DynamicGraph, RowChange, RowChangeSet, UpdateKind, UpdateOp
from .metrics import compare, exact_oracle, l1_error, spearman
from .propagation import (
    PropagationStats,
    ScoreVector,
    SignedScoreVector,
    compute_offset_seed,
    cpi,
    cpi_raw,
    dead_end_rescale,
    osp_merge,
    propagate_offset,
)
from .tracker import RwrTracker

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "CorruptStateError",
    "DeadEndMode",
    "DynamicGraph",
    "GraphUpdateError",
    "ParseError",
    "PropagationConfig",
    "PropagationStats",
    "RowChange",
    "RowChangeSet",
    "RunConfig",
    "RwrError",
    "RwrTracker",
    "ScoreVector",
    "SeedDeletionError",
    "SignedScoreVector",
    "TrackerOptions",
    "UpdateKind",
    "UpdateOp",
    "VectorShapeError",
    "compare",
    "compute_offset_seed",
    "cpi",
    "cpi_raw",
    "dead_end_rescale",
    "exact_oracle",
    "l1_error",
    "osp_merge",
    "propagate_offset",
    "spearman",
]
