"""
Benchmark sweeps comparing from-scratch CPI with exact and approximate
offset propagation.

Each sweep mutates the graph temporarily and restores it before
returning. Rows are averaged over trials; bound violations seen in any
single trial are collected separately so a verification run can fail on
them.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, TextIO, Tuple
import csv
import logging

import numpy as np
from pydantic import BaseModel

from .config import DeadEndMode, PropagationConfig
from .graph_store import DynamicGraph, RowChangeSet, UpdateOp, inverse_batch
from .metrics import ORACLE_MAX_NODES, exact_oracle, l1_error
from .propagation import (
    PropagationStats,
    ScoreVector,
    compute_offset_seed,
    cpi_raw,
    osp_merge,
    propagate_offset,
    theoretical_error_bound,
    theoretical_iteration_bound,
)
from .stream_ingest import EdgeStream, SnapshotPlan, make_snapshots, random_delete_batch

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "sweep_value",
    "method",
    "iterations",
    "visited_edges",
    "wall_time",
    "l1_error",
    "q_offset_l1",
)
REFERENCE_EPSILON = 1e-12
DENSE_REFERENCE_MAX_NODES = 2000


class BenchRow(BaseModel):
    """One averaged CSV row."""

    sweep_value: float
    method: str
    iterations: float
    visited_edges: float
    wall_time: float
    l1_error: float
    q_offset_l1: float


@dataclass
class SweepResult:
    """Averaged rows plus every bound violation observed in single trials."""

    rows: List[BenchRow] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    def column(self, method: str, name: str) -> List[float]:
        """Values of ``name`` for ``method`` in sweep order."""
        return [getattr(row, name) for row in self.rows if row.method == method]


class _Accumulator:
    def __init__(self) -> None:
        self._samples: Dict[Tuple[float, str], List[Tuple[float, ...]]] = defaultdict(list)

    def add(
        self,
        sweep_value: float,
        method: str,
        stats: PropagationStats,
        error: float,
    ) -> None:
        self._samples[(sweep_value, method)].append(
            (
                float(stats.iterations),
                float(stats.visited_edges),
                stats.wall_time,
                error,
                stats.q_offset_l1,
            )
        )

    def add_seed_mass(self, sweep_value: float, q_offset_l1: float) -> None:
        unmeasured = float("nan")
        self._samples[(sweep_value, "offset_seed")].append(
            (unmeasured, unmeasured, unmeasured, unmeasured, q_offset_l1)
        )

    def rows(self) -> List[BenchRow]:
        rows = []
        for (sweep_value, method), samples in self._samples.items():
            means = np.mean(np.asarray(samples, dtype=np.float64), axis=0)
            rows.append(
                BenchRow(
                    sweep_value=sweep_value,
                    method=method,
                    iterations=float(means[0]),
                    visited_edges=float(means[1]),
                    wall_time=float(means[2]),
                    l1_error=float(means[3]),
                    q_offset_l1=float(means[4]),
                )
            )
        return rows


def reference_raw(graph: DynamicGraph, seed: int, c: float) -> ScoreVector:
    """
    Exact raw scores: dense solve on small graphs, tight CPI otherwise.
    """
    if graph.node_count <= min(DENSE_REFERENCE_MAX_NODES, ORACLE_MAX_NODES):
        return exact_oracle(graph, seed, c, DeadEndMode.NONE)
    tight = PropagationConfig(c=c, epsilon=REFERENCE_EPSILON)
    return cpi_raw(graph, seed, tight)[0]


def sample_seeds(graph: DynamicGraph, count: int, rng_seed: int) -> List[int]:
    """
    Draw distinct seeds among alive nodes with at least one out-edge.

    Returns fewer than ``count`` seeds when not enough candidates exist.
    """
    candidates = [node for node in graph.alive_nodes() if graph.out_degree(node) > 0]
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
    return [candidates[int(i)] for i in picks]


def _offset_update(
    graph: DynamicGraph,
    change_set: RowChangeSet,
    r_old: ScoreVector,
    config: PropagationConfig,
) -> Tuple[ScoreVector, PropagationStats]:
    extended = r_old.extended(graph.node_count)
    q_offset = compute_offset_seed(change_set, extended, config.c)
    r_offset, stats = propagate_offset(graph, q_offset, config)
    return osp_merge(extended, r_offset), stats


def _check_approximate(
    result: SweepResult,
    label: str,
    stats: PropagationStats,
    error: float,
    config: PropagationConfig,
) -> None:
    bound = theoretical_iteration_bound(config)
    if stats.iterations > bound:
        result.violations.append(f"{label}: {stats.iterations} iterations > bound {bound}")
    if error > theoretical_error_bound(config):
        result.violations.append(
            f"{label}: raw L1 error {error:.3e} > epsilon/c {theoretical_error_bound(config):.3e}"
        )


class _Restore:
    """Context manager applying a deletion batch and undoing it on exit."""

    def __init__(self, graph: DynamicGraph, ops: Sequence[UpdateOp]):
        self.graph = graph
        self.ops = list(ops)
        self.change_set = RowChangeSet()

    def __enter__(self) -> RowChangeSet:
        self.change_set = self.graph.apply_batch(self.ops)
        return self.change_set

    def __exit__(self, *exc_info: object) -> None:
        self.graph.apply_batch(inverse_batch(self.ops))


def size_sweep(
    graph: DynamicGraph,
    sizes: Iterable[int],
    exact_config: PropagationConfig,
    approx_config: PropagationConfig,
    trials: int,
    rng_seed: int,
    offset_only: bool = False,
) -> SweepResult:
    """
    Vary the number of deleted edges.

    Per trial a seed is drawn and its exact scores computed; for every size
    a random deletion batch is applied, folded in with exact OSP and with
    OSP-T, recomputed with CPI from scratch, compared against the reference
    and then undone.

    Args:
        graph: Graph to measure on (restored afterwards)
        sizes: Deletion batch sizes
        exact_config: Parameters of CPI and exact OSP
        approx_config: Parameters of OSP-T
        trials: Trials per size
        rng_seed: Seed for seed selection and deletions
        offset_only: Only measure ``||q_offset||_1`` (method ``offset_seed``);
            the unmeasured columns are NaN
    """
    rng = np.random.default_rng(rng_seed)
    seeds = sample_seeds(graph, trials, int(rng.integers(2**31)))
    accumulator = _Accumulator()
    result = SweepResult()
    size_values = [int(size) for size in sizes]

    for trial, seed in enumerate(seeds):
        r_old, _ = cpi_raw(graph, seed, exact_config.with_epsilon(REFERENCE_EPSILON))
        for size in size_values:
            ops = random_delete_batch(graph, size, int(rng.integers(2**31)))
            with _Restore(graph, ops) as change_set:
                q_offset = compute_offset_seed(
                    change_set, r_old.extended(graph.node_count), exact_config.c
                )
                if offset_only:
                    accumulator.add_seed_mass(size, q_offset.l1)
                    continue

                exact = reference_raw(graph, seed, exact_config.c)
                scratch, cpi_stats = cpi_raw(graph, seed, exact_config)
                accumulator.add(size, "cpi", cpi_stats, l1_error(scratch, exact))

                osp, osp_stats = _offset_update(graph, change_set, r_old, exact_config)
                accumulator.add(size, "osp", osp_stats, l1_error(osp, exact))

                approx, approx_stats = _offset_update(graph, change_set, r_old, approx_config)
                approx_error = l1_error(approx, exact)
                accumulator.add(size, "osp_t", approx_stats, approx_error)
                _check_approximate(
                    result, f"size={size} trial={trial}", approx_stats, approx_error, approx_config
                )
        logger.debug(f"Size sweep trial {trial + 1}/{len(seeds)} done (seed {seed})")

    result.rows = accumulator.rows()
    return result


def epsilon_sweep(
    graph: DynamicGraph,
    epsilons: Iterable[float],
    config: PropagationConfig,
    trials: int,
    rng_seed: int,
    batch_size: int = 1,
) -> SweepResult:
    """
    Vary the tolerance of OSP-T (and of CPI) for a fixed update size.

    Rows use the tolerance as sweep value; methods ``cpi`` and ``osp_t``.
    """
    rng = np.random.default_rng(rng_seed)
    seeds = sample_seeds(graph, trials, int(rng.integers(2**31)))
    accumulator = _Accumulator()
    result = SweepResult()
    epsilon_values = [float(epsilon) for epsilon in epsilons]

    for trial, seed in enumerate(seeds):
        r_old, _ = cpi_raw(graph, seed, config.with_epsilon(REFERENCE_EPSILON))
        ops = random_delete_batch(graph, batch_size, int(rng.integers(2**31)))
        with _Restore(graph, ops) as change_set:
            exact = reference_raw(graph, seed, config.c)
            for epsilon in epsilon_values:
                swept = config.with_epsilon(epsilon)
                scratch, cpi_stats = cpi_raw(graph, seed, swept)
                accumulator.add(epsilon, "cpi", cpi_stats, l1_error(scratch, exact))

                approx, stats = _offset_update(graph, change_set, r_old, swept)
                error = l1_error(approx, exact)
                accumulator.add(epsilon, "osp_t", stats, error)
                _check_approximate(result, f"epsilon={epsilon} trial={trial}", stats, error, swept)

    result.rows = accumulator.rows()
    return result


def location_sweep(
    graph: DynamicGraph,
    config: PropagationConfig,
    seed: int,
    groups: int = 10,
    samples_per_group: int = 10,
    rng_seed: int = 0,
) -> SweepResult:
    """
    Vary where the update happens relative to the seed.

    Nodes with out-edges are ranked by their exact score for ``seed`` and
    split evenly into ``groups`` groups (group 1 holds the highest scores).
    For sampled nodes of each group one out-edge is deleted, the update is
    folded in with OSP-T at ``config``, compared against the reference on
    the updated graph and then undone. Rows use method ``osp_t``.
    """
    rng = np.random.default_rng(rng_seed)
    r_old = reference_raw(graph, seed, config.c)
    candidates = np.asarray(
        [node for node in graph.alive_nodes() if graph.out_degree(node) > 0], dtype=np.int64
    )
    order = candidates[np.argsort(-r_old.values[candidates], kind="stable")]
    accumulator = _Accumulator()
    result = SweepResult()

    for index, members in enumerate(np.array_split(order, groups), start=1):
        if members.size == 0:
            continue
        picks = rng.choice(members.size, size=min(samples_per_group, members.size), replace=False)
        for pick in picks:
            node = int(members[int(pick)])
            neighbors = graph.out_neighbors(node)
            target = neighbors[int(rng.integers(0, len(neighbors)))]
            with _Restore(graph, [UpdateOp.delete_edge(node, target)]) as change_set:
                approx, stats = _offset_update(graph, change_set, r_old, config)
                error = l1_error(approx, reference_raw(graph, seed, config.c))
            accumulator.add(float(index), "osp_t", stats, error)
            _check_approximate(result, f"group={index} node={node}", stats, error, config)

    result.rows = accumulator.rows()
    return result


def scalability_sweep(
    stream: EdgeStream,
    plan: SnapshotPlan,
    exact_config: PropagationConfig,
    approx_config: PropagationConfig,
    seed_count: int,
    rng_seed: int,
) -> SweepResult:
    """
    Step a graph through the snapshots of ``plan`` and time every step.

    A growing plan starts from the initial part of the stream and inserts
    one batch per step; a shrinking plan starts from the whole stream and
    deletes one batch per step. Before each step every seed holds its exact
    scores; the step is then folded in with OSP-T and recomputed with CPI
    from scratch. Rows use the edge count after the step as sweep value.

    Args:
        stream: Edge stream to build the graph from
        plan: Initial fraction, step count and direction
        exact_config: Parameters of CPI
        approx_config: Parameters of OSP-T
        seed_count: Seeds measured per step
        rng_seed: Seed for seed selection

    Raises:
        ValueError: If the stream is too short for the plan
    """
    stream, _ = stream.deduplicated()
    initial, batches = make_snapshots(stream, plan)
    graph, _ = EdgeStream(initial, stream.undirected).to_graph(stream.node_count)
    seeds = sample_seeds(graph, seed_count, rng_seed)
    exact = {seed: reference_raw(graph, seed, exact_config.c) for seed in seeds}
    accumulator = _Accumulator()
    result = SweepResult()

    for step, batch in enumerate(batches, start=1):
        change_set = graph.apply_batch(batch)
        edge_count = float(graph.edge_count)
        for seed in seeds:
            updated = reference_raw(graph, seed, exact_config.c)
            scratch, cpi_stats = cpi_raw(graph, seed, exact_config)
            accumulator.add(edge_count, "cpi", cpi_stats, l1_error(scratch, updated))

            approx, stats = _offset_update(graph, change_set, exact[seed], approx_config)
            error = l1_error(approx, updated)
            accumulator.add(edge_count, "osp_t", stats, error)
            _check_approximate(result, f"step={step} seed={seed}", stats, error, approx_config)
            exact[seed] = updated
        logger.debug(f"Scalability step {step}/{len(batches)}: {graph.edge_count} edges")

    result.rows = accumulator.rows()
    return result


def write_bench_csv(rows: Iterable[BenchRow], target: TextIO) -> None:
    """Write rows with the fixed column order."""
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                repr(row.sweep_value),
                row.method,
                repr(row.iterations),
                repr(row.visited_edges),
                repr(row.wall_time),
                repr(row.l1_error),
                repr(row.q_offset_l1),
            ]
        )
