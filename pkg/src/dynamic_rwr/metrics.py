"""
Accuracy measurement for RWR vectors.

Provides L1 error, Spearman rank correlation (average ranks for ties), a
dense direct-solve oracle that shares no code with the iterative engine,
and checks against the iteration and error bounds of approximate updates.
"""

from typing import Optional, Tuple, Union
import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.stats import rankdata

from .config import DeadEndMode, PropagationConfig
from .errors import (
    GraphUpdateError,
    OracleSizeError,
    UndefinedCorrelationError,
    VectorShapeError,
)
from .graph_store import DynamicGraph
from .propagation import (
    PropagationStats,
    ScoreVector,
    SignedScoreVector,
    dead_end_rescale,
    theoretical_error_bound,
    theoretical_iteration_bound,
)

logger = logging.getLogger(__name__)

ORACLE_MAX_NODES = 5000

Vector = Union[SignedScoreVector, np.ndarray]


class ComparisonReport(BaseModel):
    """
    Accuracy and cost of one approximate vector against an exact one.

    Serialized as JSON with keys in field order.
    """

    l1_error: float
    spearman: Optional[float]
    raw_l1_error: float
    iterations: int
    visited_edges: int
    wall_time: float
    bound_epsilon_over_c: float
    bound_satisfied: bool


def _values(x: Vector) -> np.ndarray:
    if isinstance(x, SignedScoreVector):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _pair(a: Vector, b: Vector) -> Tuple[np.ndarray, np.ndarray]:
    left, right = _values(a), _values(b)
    if left.shape != right.shape:
        raise VectorShapeError(f"length mismatch: {left.shape[0]} vs {right.shape[0]}")
    return left, right


def l1_error(a: Vector, b: Vector) -> float:
    """Sum of absolute entrywise differences."""
    left, right = _pair(a, b)
    return float(np.abs(left - right).sum())


def spearman(a: Vector, b: Vector) -> float:
    """
    Spearman rank correlation with average ranks for ties.

    Args:
        a: First score vector (length >= 2)
        b: Second score vector, same length

    Returns:
        Correlation in ``[-1, 1]``

    Raises:
        VectorShapeError: If lengths differ
        UndefinedCorrelationError: If either input has constant ranks
    """
    left, right = _pair(a, b)
    if left.shape[0] < 2:
        raise UndefinedCorrelationError("rank correlation needs at least two entries")

    ranks_a = rankdata(left, method="average")
    ranks_b = rankdata(right, method="average")
    centered_a = ranks_a - ranks_a.mean()
    centered_b = ranks_b - ranks_b.mean()
    spread_a = float(np.dot(centered_a, centered_a))
    spread_b = float(np.dot(centered_b, centered_b))
    if spread_a == 0.0 or spread_b == 0.0:
        raise UndefinedCorrelationError("rank variance is zero")

    rho = float(np.dot(centered_a, centered_b)) / math.sqrt(spread_a * spread_b)
    return max(-1.0, min(1.0, rho))


def _check_oracle(graph: DynamicGraph, seed: int) -> None:
    if graph.node_count > ORACLE_MAX_NODES:
        raise OracleSizeError(
            f"dense oracle limited to {ORACLE_MAX_NODES} nodes, graph has {graph.node_count}"
        )
    if not graph.is_alive(seed):
        raise GraphUpdateError(f"seed {seed} is not a node of the graph")


def _solve(transition: np.ndarray, seed: int, c: float) -> np.ndarray:
    n = transition.shape[0]
    system = np.eye(n) - (1.0 - c) * transition.T
    rhs = np.zeros(n, dtype=np.float64)
    rhs[seed] = c
    solution = np.linalg.solve(system, rhs)
    return np.maximum(solution, 0.0)


def exact_oracle(
    graph: DynamicGraph,
    seed: int,
    c: float,
    dead_end_mode: DeadEndMode = DeadEndMode.RESCALE,
) -> ScoreVector:
    """
    Exact RWR scores by a dense direct solve of ``r = (1-c) Ã^T r + c e_seed``.

    Dead-end rows stay zero (mass leaks); under ``RESCALE`` the solution is
    divided by its L1 mass.

    Raises:
        OracleSizeError: If the graph has more than ``ORACLE_MAX_NODES`` nodes
    """
    _check_oracle(graph, seed)
    solution = _solve(graph.dense_transition(), seed, c)
    if dead_end_mode is DeadEndMode.RESCALE:
        return ScoreVector(solution / solution.sum())
    return ScoreVector(solution)


def augmented_oracle(graph: DynamicGraph, seed: int, c: float) -> ScoreVector:
    """
    Exact scores when every dead-end links to the seed instead of leaking.

    Classical construction for dead-end handling; equals the rescaled leaky
    solution.
    """
    _check_oracle(graph, seed)
    transition = graph.dense_transition()
    for node in graph.dead_ends():
        transition[node, seed] = 1.0
    return ScoreVector(_solve(transition, seed, c))


def check_bounds(stats: PropagationStats, config: PropagationConfig) -> Tuple[bool, str]:
    """
    Compare observed iterations with the theoretical ceiling.

    Returns:
        Whether the run stayed within the bound, and a short note
    """
    bound = theoretical_iteration_bound(config)
    ok = stats.iterations <= bound
    relation = "<=" if ok else ">"
    return ok, f"iterations {stats.iterations} {relation} bound {bound}"


def compare(
    approx_raw: Vector,
    exact_raw: Vector,
    config: PropagationConfig,
    stats: Optional[PropagationStats] = None,
) -> ComparisonReport:
    """
    Build a report for an approximate raw vector against the exact one.

    The error bound is checked on raw vectors; ``l1_error`` and
    ``spearman`` use the rescaled (unit-mass) vectors.
    """
    approx, exact = _pair(approx_raw, exact_raw)
    raw_error = l1_error(approx, exact)
    rescaled_approx = dead_end_rescale(approx)
    rescaled_exact = dead_end_rescale(exact)

    try:
        rho: Optional[float] = spearman(rescaled_approx, rescaled_exact)
    except UndefinedCorrelationError:
        logger.warning("Spearman correlation undefined for these vectors")
        rho = None

    bound = theoretical_error_bound(config)
    stats = stats or PropagationStats()
    return ComparisonReport(
        l1_error=l1_error(rescaled_approx, rescaled_exact),
        spearman=rho,
        raw_l1_error=raw_error,
        iterations=stats.iterations,
        visited_edges=stats.visited_edges,
        wall_time=stats.wall_time,
        bound_epsilon_over_c=bound,
        bound_satisfied=raw_error <= bound,
    )
