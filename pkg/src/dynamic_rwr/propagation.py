"""
Numerical core of the dynamic RWR engine.

Cumulative power iteration (CPI) computes RWR scores from scratch by
repeatedly pushing mass through ``(1 - c) Ã^T`` and summing every interim
vector. Offset score propagation (OSP) updates existing scores after a
graph change: it builds a signed offset seed from the modified rows,
propagates it on the updated graph with the same accumulation scheme and
adds the result to the previous scores. With a loose tolerance the same
routine gives the approximate variant (OSP-T).

All vectors handled here are *raw* accumulations: mass that leaks out of
dead-ends is not redistributed. ``dead_end_rescale`` turns a raw vector
into a unit-mass RWR vector at read-out time.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union
import logging
import time

import numpy as np
from pydantic import BaseModel, Field

from .config import DeadEndMode, PropagationConfig, iteration_bound
from .errors import ConvergenceError, CorruptStateError, GraphUpdateError, VectorShapeError
from .graph_store import DynamicGraph, RowChangeSet

logger = logging.getLogger(__name__)

NEGATIVE_CLAMP = -1e-9

ArrayLike = Union[np.ndarray, List[float]]


@dataclass(frozen=True, eq=False)
class SignedScoreVector:
    """
    Dense per-node scores of any sign (offset seeds, offset scores).

    The array is copied and frozen on construction; ``l1`` is computed once.
    """

    values: np.ndarray
    l1: float = field(init=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "l1", float(np.abs(values).sum()))

    @classmethod
    def zeros(cls, length: int) -> "SignedScoreVector":
        return cls(np.zeros(length, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __getitem__(self, index: int) -> float:
        return float(self.values[index])

    def total(self) -> float:
        """Signed sum of all entries."""
        return float(self.values.sum())


@dataclass(frozen=True, eq=False)
class ScoreVector(SignedScoreVector):
    """Dense non-negative per-node scores (raw or rescaled RWR vectors)."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.values.size and float(self.values.min()) < 0.0:
            raise CorruptStateError("score vector has negative entries")

    def extended(self, length: int) -> "ScoreVector":
        """Copy padded with zeros up to ``length`` entries."""
        if length < len(self):
            raise VectorShapeError(f"cannot shrink vector of length {len(self)} to {length}")
        padded = np.zeros(length, dtype=np.float64)
        padded[: len(self)] = self.values
        return ScoreVector(padded)


class PropagationStats(BaseModel):
    """
    Observables of one propagation run.

    ``wall_time`` covers propagation only; graph mutation is reported
    separately in ``mutation_time``.
    """

    iterations: int = 0
    visited_edges: int = 0
    q_offset_l1: float = 0.0
    wall_time: float = 0.0
    mutation_time: float = 0.0
    refreshed_from_scratch: bool = False
    interim_l1: List[float] = Field(default_factory=list)


def _as_array(x: Union[SignedScoreVector, ArrayLike]) -> np.ndarray:
    if isinstance(x, SignedScoreVector):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _check_length(graph: DynamicGraph, values: np.ndarray, name: str) -> None:
    if values.shape[0] != graph.node_count:
        raise VectorShapeError(
            f"{name} has length {values.shape[0]}, graph has {graph.node_count} nodes"
        )


def spmv_transpose_normalized(
    graph: DynamicGraph,
    x: Union[SignedScoreVector, ArrayLike],
    c: float,
    stats: Optional[PropagationStats] = None,
) -> SignedScoreVector:
    """
    Push scores one step along out-edges: ``(1 - c) Ã^T x``.

    Each node splits its score evenly over its out-edges; dead-ends
    contribute nothing.

    Args:
        graph: Graph defining ``Ã``
        x: Scores to propagate
        c: Restart probability
        stats: Optional stats whose ``visited_edges`` is incremented by the
            out-degree of every node with a nonzero score

    Returns:
        Propagated scores
    """
    values = _as_array(x)
    _check_length(graph, values, "x")
    if stats is not None:
        stats.visited_edges += int(graph.out_degrees()[values != 0.0].sum())
    return SignedScoreVector((1.0 - c) * (graph.transition_operator() @ values))


def _accumulate(
    graph: DynamicGraph,
    seed_values: np.ndarray,
    config: PropagationConfig,
    stats: PropagationStats,
) -> np.ndarray:
    operator = graph.transition_operator()
    degrees = graph.out_degrees()
    decay = 1.0 - config.c

    interim = seed_values.copy()
    total = interim.copy()
    norm = float(np.abs(interim).sum())
    stats.interim_l1.append(norm)

    while norm > config.epsilon:
        if stats.iterations >= config.max_iterations:
            raise ConvergenceError(
                f"no convergence after {stats.iterations} iterations "
                f"(interim mass {norm:.3e} > epsilon {config.epsilon:.3e})",
                stats,
            )
        stats.visited_edges += int(degrees[interim != 0.0].sum())
        interim = decay * (operator @ interim)
        total += interim
        stats.iterations += 1
        norm = float(np.abs(interim).sum())
        stats.interim_l1.append(norm)

    return total


def cpi_raw(
    graph: DynamicGraph, seed: int, config: PropagationConfig
) -> Tuple[ScoreVector, PropagationStats]:
    """
    Raw CPI accumulation for ``seed`` (no dead-end rescaling).

    Starts from ``c * e_seed`` and stops once the latest interim vector has
    L1 mass of at most ``epsilon``.

    Raises:
        GraphUpdateError: If ``seed`` is not an alive node
        ConvergenceError: If ``max_iterations`` is exceeded
    """
    if not graph.is_alive(seed):
        raise GraphUpdateError(f"seed {seed} is not a node of the graph")

    stats = PropagationStats()
    seed_values = np.zeros(graph.node_count, dtype=np.float64)
    seed_values[seed] = config.c

    started = time.perf_counter()
    try:
        total = _accumulate(graph, seed_values, config, stats)
    finally:
        stats.wall_time = time.perf_counter() - started

    logger.debug(
        f"CPI seed={seed}: {stats.iterations} iterations, {stats.visited_edges} visited edges"
    )
    return ScoreVector(np.maximum(total, 0.0)), stats


def cpi(
    graph: DynamicGraph, seed: int, config: PropagationConfig
) -> Tuple[ScoreVector, PropagationStats]:
    """
    RWR scores for ``seed`` computed from scratch.

    Under ``DeadEndMode.RESCALE`` the raw accumulation is divided by its
    L1 mass, otherwise it is returned as is.

    Args:
        graph: Current graph
        seed: Seed node
        config: Propagation parameters

    Returns:
        Score vector and statistics
    """
    raw, stats = cpi_raw(graph, seed, config)
    if config.dead_end_mode is DeadEndMode.RESCALE:
        return dead_end_rescale(raw), stats
    return raw, stats


def compute_offset_seed(
    change_set: RowChangeSet, r_old_raw: Union[ScoreVector, ArrayLike], c: float
) -> SignedScoreVector:
    """
    Offset seed ``q_offset = (1 - c) ΔÃ^T r_old``.

    For every modified row ``u`` the old contribution
    ``r_old[u] / old_degree`` is removed from each old neighbor and the new
    contribution ``r_old[u] / new_degree`` is added to each new neighbor.
    Only modified rows are visited.

    Args:
        change_set: Rows modified by the batch
        r_old_raw: Raw scores before the update, extended with zeros to the
            post-update node count
        c: Restart probability

    Returns:
        Signed offset seed vector

    Raises:
        VectorShapeError: If a modified row or neighbor lies outside the vector
    """
    r_old = _as_array(r_old_raw)
    length = r_old.shape[0]
    offset = np.zeros(length, dtype=np.float64)
    decay = 1.0 - c

    for change in change_set:
        touched = max((change.node, *change.old_neighbors, *change.new_neighbors))
        if touched >= length:
            raise VectorShapeError(f"score vector of length {length} does not cover node {touched}")
        mass = decay * float(r_old[change.node])
        if mass == 0.0:
            continue
        if change.old_degree:
            offset[list(change.old_neighbors)] -= mass / change.old_degree
        if change.new_degree:
            offset[list(change.new_neighbors)] += mass / change.new_degree

    return SignedScoreVector(offset)


def propagate_offset(
    graph: DynamicGraph,
    q_offset: Union[SignedScoreVector, ArrayLike],
    config: PropagationConfig,
) -> Tuple[SignedScoreVector, PropagationStats]:
    """
    Offset scores ``r_offset = sum_{i>=0} ((1 - c) B̃^T)^i q_offset``.

    The ``i = 0`` term is included. The tolerance check runs on the latest
    interim vector before every multiply, so a seed already under
    ``epsilon`` is returned without touching the graph.

    Args:
        graph: Graph after the update (defines ``B̃``)
        q_offset: Offset seed vector
        config: Propagation parameters

    Returns:
        Offset score vector and statistics

    Raises:
        ConvergenceError: If ``max_iterations`` is exceeded
    """
    seed_values = _as_array(q_offset)
    _check_length(graph, seed_values, "q_offset")

    stats = PropagationStats()
    stats.q_offset_l1 = float(np.abs(seed_values).sum())

    started = time.perf_counter()
    try:
        total = _accumulate(graph, seed_values, config, stats)
    finally:
        stats.wall_time = time.perf_counter() - started
    return SignedScoreVector(total), stats


def osp_merge(
    r_old_raw: Union[ScoreVector, ArrayLike], r_offset: Union[SignedScoreVector, ArrayLike]
) -> ScoreVector:
    """
    Updated raw scores ``r_new = r_old + r_offset``.

    Entries in ``[-1e-9, 0)`` are rounding noise and clamped to zero.

    Raises:
        VectorShapeError: If lengths differ
        CorruptStateError: If any entry falls below ``-1e-9``
    """
    old = _as_array(r_old_raw)
    offset = _as_array(r_offset)
    if old.shape != offset.shape:
        raise VectorShapeError(
            f"cannot merge vectors of length {old.shape[0]} and {offset.shape[0]}"
        )

    merged = old + offset
    if merged.size and float(merged.min()) < NEGATIVE_CLAMP:
        worst = int(np.argmin(merged))
        raise CorruptStateError(f"merged score of node {worst} is {merged[worst]:.3e}")
    return ScoreVector(np.maximum(merged, 0.0))


def dead_end_rescale(r_temp: Union[ScoreVector, ArrayLike]) -> ScoreVector:
    """
    Divide a raw accumulation by its L1 mass.

    Raises:
        CorruptStateError: If the vector has zero mass
    """
    values = _as_array(r_temp)
    mass = float(np.abs(values).sum())
    if mass == 0.0:
        raise CorruptStateError("cannot rescale a zero vector")
    return ScoreVector(values / mass)


def theoretical_iteration_bound(config: PropagationConfig) -> int:
    """Iteration ceiling ``ceil(log_{1-c}(epsilon / 2))`` for offset propagation."""
    return iteration_bound(config.c, config.epsilon)


def theoretical_error_bound(config: PropagationConfig) -> float:
    """L1 error bound ``epsilon / c`` of a raw approximate update."""
    return config.epsilon / config.c


def fixed_point_residual(
    graph: DynamicGraph, r: Union[ScoreVector, ArrayLike], seed: int, c: float
) -> float:
    """L1 residual ``||r - ((1 - c) Ã^T r + c e_seed)||_1``."""
    values = _as_array(r)
    _check_length(graph, values, "r")
    expected = (1.0 - c) * (graph.transition_operator() @ values)
    expected[seed] += c
    return float(np.abs(values - expected).sum())
