"""
Per-seed RWR tracking on a dynamic graph.

A tracker keeps the raw score vector of one seed in sync with the graph:
it starts from a CPI computation and folds every update batch in through
offset score propagation. Scores are stored raw (dead-end leakage not
redistributed) and rescaled only when queried.

Approximate updates (large ``epsilon``) add at most ``epsilon / c`` L1
error per batch; the errors add up across batches. ``refresh_every``
bounds the drift by recomputing from scratch periodically.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Union
import logging
import time

from .config import DeadEndMode, PropagationConfig, TrackerOptions
from .errors import (
    ConvergenceError,
    CorruptStateError,
    ParseError,
    SeedDeletionError,
    VectorShapeError,
)
from .graph_store import DynamicGraph, RowChangeSet, UpdateKind, UpdateOp
from .propagation import (
    PropagationStats,
    ScoreVector,
    compute_offset_seed,
    cpi_raw,
    dead_end_rescale,
    osp_merge,
    propagate_offset,
)
from .score_io import format_header, read_score_dump, write_score_dump

CHECKPOINT_TAG = "rwr-checkpoint"


class RwrTracker:
    """
    Maintains the RWR vector of one seed across graph updates.

    A tracker must only be used from one thread at a time. Several trackers
    may read the same graph concurrently as long as nobody mutates it.
    """

    def __init__(
        self,
        seed: int,
        config: PropagationConfig,
        r_raw: ScoreVector,
        options: Optional[TrackerOptions] = None,
        batches_applied: int = 0,
    ):
        """
        Wrap an existing raw score vector.

        Use ``initialize`` to start from a graph, or ``load_checkpoint`` to
        resume from disk.

        Args:
            seed: Seed node id
            config: Propagation parameters
            r_raw: Raw scores for the current graph state
            options: Lifecycle options (periodic refresh)
            batches_applied: Number of batches already folded in
        """
        self.seed = seed
        self.config = config
        self.r_raw = r_raw
        self.options = options or TrackerOptions()
        self.batches_applied = batches_applied
        self.cumulative_stats: List[PropagationStats] = []
        self._logger = logging.getLogger(f"{self.__class__.__name__}[{seed}]")

    @classmethod
    def initialize(
        cls,
        graph: DynamicGraph,
        seed: int,
        config: PropagationConfig,
        options: Optional[TrackerOptions] = None,
    ) -> "RwrTracker":
        """
        Compute the initial raw scores with CPI.

        Args:
            graph: Current graph
            seed: Seed node
            config: Propagation parameters
            options: Lifecycle options

        Returns:
            A tracker holding the raw CPI result
        """
        r_raw, stats = cpi_raw(graph, seed, config)
        tracker = cls(seed, config, r_raw, options)
        tracker.cumulative_stats.append(stats)
        tracker._logger.info(
            f"Initialized on {graph.node_count} nodes: {stats.iterations} iterations, "
            f"{stats.visited_edges} visited edges"
        )
        return tracker

    @property
    def raw_l1(self) -> float:
        """L1 mass of the raw vector (1 when the graph has no dead-ends)."""
        return self.r_raw.l1

    def update(
        self, graph: DynamicGraph, ops: Sequence[UpdateOp], strict: bool = True
    ) -> PropagationStats:
        """
        Apply ``ops`` to ``graph`` and fold the change into the scores.

        Args:
            graph: Graph the tracker follows (mutated in place)
            ops: Update batch
            strict: Reject inapplicable ops instead of skipping them

        Returns:
            Statistics of the offset propagation

        Raises:
            SeedDeletionError: If the batch deletes the seed
            GraphUpdateError: On strict-mode or invalid-id failures
        """
        self.check_ops(ops)

        started = time.perf_counter()
        change_set = graph.apply_batch(ops, strict=strict)
        graph.transition_operator()
        mutation_time = time.perf_counter() - started

        stats = self.apply_change_set(graph, change_set)
        stats.mutation_time = mutation_time
        return stats

    def check_ops(self, ops: Sequence[UpdateOp]) -> None:
        """Reject batches that would delete the seed."""
        for op in ops:
            if op.kind is UpdateKind.DELETE_NODE and op.src == self.seed:
                raise SeedDeletionError(f"batch deletes seed node {self.seed}")

    def apply_change_set(
        self, graph: DynamicGraph, change_set: RowChangeSet
    ) -> PropagationStats:
        """
        Fold an already-applied batch into the scores.

        ``graph`` must be the state right after the batch that produced
        ``change_set``. If propagation fails the scores are recomputed from
        scratch and the returned stats are flagged.

        Args:
            graph: Updated graph
            change_set: Rows modified by the batch

        Returns:
            Statistics of the offset propagation
        """
        if self.seed in change_set.deleted_nodes:
            raise SeedDeletionError(f"batch deleted seed node {self.seed}")

        r_old = self.r_raw.extended(graph.node_count)
        q_offset = compute_offset_seed(change_set, r_old, self.config.c)
        try:
            r_offset, stats = propagate_offset(graph, q_offset, self.config)
            self.r_raw = osp_merge(r_old, r_offset)
        except (ConvergenceError, CorruptStateError) as error:
            self._logger.warning(f"Offset propagation failed ({error}); recomputing from scratch")
            self.r_raw, stats = cpi_raw(graph, self.seed, self.config)
            stats.q_offset_l1 = q_offset.l1
            stats.refreshed_from_scratch = True

        self.batches_applied += 1
        self.cumulative_stats.append(stats)
        self._logger.debug(
            f"Batch {self.batches_applied}: {len(change_set)} rows, "
            f"|q_offset|={stats.q_offset_l1:.3e}, {stats.iterations} iterations"
        )

        refresh_every = self.options.refresh_every
        if refresh_every and self.batches_applied % refresh_every == 0:
            self.refresh(graph)
        return stats

    def query(self) -> ScoreVector:
        """
        Current RWR scores.

        Returns:
            ``r_raw / ||r_raw||_1`` under rescale mode, a copy of ``r_raw``
            otherwise
        """
        if self.config.dead_end_mode is DeadEndMode.RESCALE:
            return dead_end_rescale(self.r_raw)
        return ScoreVector(self.r_raw.values)

    def refresh(self, graph: DynamicGraph) -> PropagationStats:
        """
        Replace the scores with a fresh CPI computation.

        Returns:
            Statistics of the CPI run
        """
        self.r_raw, stats = cpi_raw(graph, self.seed, self.config)
        stats.refreshed_from_scratch = True
        self.cumulative_stats.append(stats)
        self._logger.info(f"Refreshed after {self.batches_applied} batches")
        return stats

    def checkpoint_header(self) -> str:
        return format_header(
            {
                "seed": self.seed,
                "c": self.config.c,
                "epsilon": self.config.epsilon,
                "batches": self.batches_applied,
            },
            tag=CHECKPOINT_TAG,
        )

    def save_checkpoint(self, path: Union[str, Path]) -> None:
        """Write the raw scores with a checkpoint header."""
        headers = [
            self.checkpoint_header(),
            format_header({"dead_end": self.config.dead_end_mode.value, "mode": "raw"}),
        ]
        write_score_dump(path, self.r_raw.values, headers)

    @classmethod
    def load_checkpoint(
        cls,
        path: Union[str, Path],
        graph: DynamicGraph,
        options: Optional[TrackerOptions] = None,
    ) -> "RwrTracker":
        """
        Rebuild a tracker from a checkpoint without rerunning CPI.

        Args:
            path: Checkpoint file
            graph: Graph the checkpoint was taken on
            options: Lifecycle options

        Raises:
            ParseError: If the checkpoint header is missing
            VectorShapeError: If the node count differs from the graph's
        """
        dump = read_score_dump(path)
        if CHECKPOINT_TAG not in dump.tags:
            raise ParseError(f"missing '#{CHECKPOINT_TAG}' header", 1)
        scores = dump.as_dense()
        if scores.shape[0] != graph.node_count:
            raise VectorShapeError(
                f"checkpoint has {scores.shape[0]} nodes, graph has {graph.node_count}"
            )
        config = PropagationConfig(
            c=dump.get_float("c"),
            epsilon=dump.get_float("epsilon"),
            dead_end_mode=DeadEndMode(dump.metadata.get("dead_end", DeadEndMode.RESCALE.value)),
        )
        return cls(
            dump.get_int("seed"),
            config,
            ScoreVector(scores),
            options,
            batches_applied=dump.get_int("batches"),
        )

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(seed={self.seed}, c={self.config.c}, "
            f"epsilon={self.config.epsilon}, batches={self.batches_applied})"
        )
