"""
Dynamic graph storage for the RWR engine.

Holds the evolving directed graph, applies update batches and records
the before/after state of every modified row. The row-normalized
transition matrix is never stored: row ``u`` has ``1 / out_degree(u)`` at
each out-neighbor and is all zero for dead-ends.
"""

from bisect import bisect_left, insort
from dataclasses import dataclass, field
from enum import Enum
from itertools import chain
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import logging
import threading

import numpy as np
import scipy.sparse as sp

from .errors import GraphUpdateError, VectorShapeError

logger = logging.getLogger(__name__)


class UpdateKind(str, Enum):
    """Kinds of graph modification."""

    INSERT_EDGE = "insert_edge"
    DELETE_EDGE = "delete_edge"
    INSERT_NODE = "insert_node"
    DELETE_NODE = "delete_node"


@dataclass(frozen=True)
class UpdateOp:
    """
    A single graph modification.

    ``src`` is unused for ``INSERT_NODE`` (the new id is assigned at
    application time); ``dst`` is only meaningful for edge operations.
    """

    kind: UpdateKind
    src: int = -1
    dst: int = -1

    @classmethod
    def insert_edge(cls, src: int, dst: int) -> "UpdateOp":
        return cls(UpdateKind.INSERT_EDGE, src, dst)

    @classmethod
    def delete_edge(cls, src: int, dst: int) -> "UpdateOp":
        return cls(UpdateKind.DELETE_EDGE, src, dst)

    @classmethod
    def insert_node(cls) -> "UpdateOp":
        return cls(UpdateKind.INSERT_NODE)

    @classmethod
    def delete_node(cls, node: int) -> "UpdateOp":
        return cls(UpdateKind.DELETE_NODE, node)

    @property
    def is_edge_op(self) -> bool:
        return self.kind in (UpdateKind.INSERT_EDGE, UpdateKind.DELETE_EDGE)


@dataclass(frozen=True)
class RowChange:
    """Before/after snapshot of one out-neighbor row."""

    node: int
    old_neighbors: Tuple[int, ...]
    new_neighbors: Tuple[int, ...]

    @property
    def old_degree(self) -> int:
        return len(self.old_neighbors)

    @property
    def new_degree(self) -> int:
        return len(self.new_neighbors)

    def delta_row(self) -> Dict[int, float]:
        """
        Nonzero entries of this row of ``B̃ - Ã``.

        Returns:
            Mapping column -> difference, columns in ascending order
        """
        delta: Dict[int, float] = {}
        if self.old_degree:
            weight = 1.0 / self.old_degree
            for v in self.old_neighbors:
                delta[v] = delta.get(v, 0.0) - weight
        if self.new_degree:
            weight = 1.0 / self.new_degree
            for v in self.new_neighbors:
                delta[v] = delta.get(v, 0.0) + weight
        return {v: delta[v] for v in sorted(delta) if delta[v] != 0.0}

    def total_variation(self) -> float:
        """Diagonal entry ``D_uu = sum_j |ΔÃ_uj|``."""
        return float(sum(abs(value) for value in self.delta_row().values()))


@dataclass
class RowChangeSet:
    """
    Rows modified by one update batch.

    Attributes:
        rows: Modified rows keyed by node id
        inserted_nodes: Ids created by the batch, in creation order
        deleted_nodes: Ids deleted by the batch
        skipped_ops: Ops ignored in lenient mode
    """

    rows: Dict[int, RowChange] = field(default_factory=dict)
    inserted_nodes: List[int] = field(default_factory=list)
    deleted_nodes: List[int] = field(default_factory=list)
    skipped_ops: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[RowChange]:
        for node in sorted(self.rows):
            yield self.rows[node]

    def __contains__(self, node: object) -> bool:
        return node in self.rows

    @property
    def is_empty(self) -> bool:
        return not self.rows

    def diagonal(self) -> Dict[int, float]:
        """Nonzero-row entries of the diagonal matrix ``D``."""
        return {change.node: change.total_variation() for change in self}

    def touched_edges(self) -> int:
        """Sum of old and new degrees over modified rows."""
        return sum(change.old_degree + change.new_degree for change in self)


def row_change_l1(change_set: RowChangeSet, r_old: np.ndarray, c: float) -> float:
    """
    Upper bound ``(1 - c) * ||D r_old||_1`` on the offset seed mass.

    Args:
        change_set: Rows modified by the batch
        r_old: Raw score vector, already extended to the post-update length
        c: Restart probability

    Returns:
        Non-negative bound value

    Raises:
        VectorShapeError: If a modified row lies outside ``r_old``
    """
    values = np.asarray(r_old, dtype=np.float64)
    total = 0.0
    for change in change_set:
        if change.node >= values.shape[0]:
            raise VectorShapeError(
                f"score vector of length {values.shape[0]} does not cover node {change.node}"
            )
        total += change.total_variation() * float(values[change.node])
    return (1.0 - c) * total


def _remove_sorted(items: List[int], value: int) -> bool:
    index = bisect_left(items, value)
    if index < len(items) and items[index] == value:
        del items[index]
        return True
    return False


def _contains_sorted(items: Sequence[int], value: int) -> bool:
    index = bisect_left(items, value)
    return index < len(items) and items[index] == value


class DynamicGraph:
    """
    Mutable simple directed graph with mirrored in/out adjacency.

    Neighbor lists are kept sorted so that every traversal and reduction
    runs in ascending node-id order. Deleted nodes keep their slot with zero
    degree; ids are never recycled. Undirected graphs store each edge as two
    arcs.

    Mutation is exclusive; concurrent readers are safe between mutations.
    """

    def __init__(self, node_count: int = 0, undirected: bool = False):
        """
        Create a graph with ``node_count`` isolated nodes.

        Args:
            node_count: Initial number of nodes
            undirected: Store each logical edge as two directed arcs
        """
        if node_count < 0:
            raise ValueError("node_count must be non-negative")
        self.undirected = undirected
        self._out: List[List[int]] = [[] for _ in range(node_count)]
        self._in: List[List[int]] = [[] for _ in range(node_count)]
        self._alive: List[bool] = [True] * node_count
        self._edge_count = 0
        self._version = 0
        self._lock = threading.RLock()
        self._operator_cache: Optional[Tuple[int, sp.csr_matrix, np.ndarray]] = None
        self._logger = logging.getLogger(self.__class__.__name__)

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[Tuple[int, int]],
        undirected: bool = False,
        lenient: bool = True,
    ) -> Tuple["DynamicGraph", int]:
        """
        Build a graph from an edge sequence.

        Args:
            node_count: Number of nodes (ids must lie in ``[0, node_count)``)
            edges: ``(src, dst)`` pairs
            undirected: Store edges as symmetric arcs
            lenient: Skip duplicate edges instead of failing

        Returns:
            The graph and the number of skipped duplicates
        """
        graph = cls(node_count, undirected=undirected)
        skipped = 0
        for src, dst in edges:
            graph._check_node(src)
            graph._check_node(dst)
            if graph.has_edge(src, dst) or (undirected and graph.has_edge(dst, src)):
                if not lenient:
                    raise GraphUpdateError(f"duplicate edge {src}->{dst}")
                skipped += 1
                continue
            graph._add_arc(src, dst)
            if undirected and src != dst:
                graph._add_arc(dst, src)
        graph._version += 1
        if skipped:
            graph._logger.warning(f"Skipped {skipped} duplicate edges while building graph")
        return graph, skipped

    # ------------------------------------------------------------------ reads

    @property
    def node_count(self) -> int:
        return len(self._out)

    @property
    def edge_count(self) -> int:
        """Number of stored directed arcs."""
        return self._edge_count

    @property
    def version(self) -> int:
        """Counter bumped by every mutation."""
        return self._version

    def out_neighbors(self, node: int) -> Tuple[int, ...]:
        return tuple(self._out[node])

    def in_neighbors(self, node: int) -> Tuple[int, ...]:
        return tuple(self._in[node])

    def out_degree(self, node: int) -> int:
        return len(self._out[node])

    def has_edge(self, src: int, dst: int) -> bool:
        return _contains_sorted(self._out[src], dst)

    def is_alive(self, node: int) -> bool:
        return 0 <= node < self.node_count and self._alive[node]

    def alive_nodes(self) -> List[int]:
        return [node for node, alive in enumerate(self._alive) if alive]

    def dead_ends(self) -> List[int]:
        """Alive nodes with zero out-degree."""
        return [node for node in self.alive_nodes() if not self._out[node]]

    def edges(self) -> Iterator[Tuple[int, int]]:
        """Iterate over all arcs in ascending ``(src, dst)`` order."""
        for src, neighbors in enumerate(self._out):
            for dst in neighbors:
                yield src, dst

    def out_degrees(self) -> np.ndarray:
        """Out-degree of every node as an integer array."""
        return self._operator()[1]

    def transition_operator(self) -> sp.csr_matrix:
        """
        Sparse ``Ã^T`` for the current graph state.

        Entry ``(v, u)`` is ``1 / out_degree(u)`` for each arc ``u -> v``.
        Column indices within each row are sorted, so products accumulate
        in ascending source order. Cached until the next mutation.
        """
        return self._operator()[0]

    def _operator(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        with self._lock:
            cache = self._operator_cache
            if cache is not None and cache[0] == self._version:
                return cache[1], cache[2]

            n = self.node_count
            degrees = np.fromiter((len(row) for row in self._out), dtype=np.int64, count=n)
            src = np.repeat(np.arange(n, dtype=np.int64), degrees)
            arc_count = int(degrees.sum())
            dst = np.fromiter(chain.from_iterable(self._out), dtype=np.int64, count=arc_count)
            weights = 1.0 / degrees[src] if src.size else np.zeros(0, dtype=np.float64)
            operator = sp.csr_matrix((weights, (dst, src)), shape=(n, n), dtype=np.float64)
            operator.sort_indices()

            self._operator_cache = (self._version, operator, degrees)
            self._logger.debug(f"Rebuilt transition operator: n={n}, m={degrees.sum()}")
            return operator, degrees

    def dense_transition(self) -> np.ndarray:
        """Dense row-normalized adjacency matrix ``Ã`` (rows of dead-ends are zero)."""
        n = self.node_count
        matrix = np.zeros((n, n), dtype=np.float64)
        for src, neighbors in enumerate(self._out):
            if neighbors:
                matrix[src, neighbors] = 1.0 / len(neighbors)
        return matrix

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(nodes={self.node_count}, "
            f"edges={self.edge_count}, undirected={self.undirected})"
        )

    # -------------------------------------------------------------- mutation

    def add_node(self) -> int:
        """
        Append an isolated node.

        Returns:
            The new node id (the previous ``node_count``)
        """
        with self._lock:
            node = self._append_node()
            self._version += 1
            return node

    def apply_batch(self, ops: Sequence[UpdateOp], strict: bool = True) -> RowChangeSet:
        """
        Apply ``ops`` in order and record every modified row.

        Snapshots are batch-granular: a row is captured before the first op
        touching it and after the last one. Deleting a node also removes
        every arc pointing into it, so those source rows are recorded too.
        On failure the graph is restored to its state before the batch.

        Args:
            ops: Operations to apply in sequence
            strict: Fail on duplicate inserts and missing deletes; when
                False such ops are skipped and counted

        Returns:
            Row change records for the batch

        Raises:
            GraphUpdateError: On an invalid node id or a strict-mode violation
        """
        with self._lock:
            before: Dict[int, Tuple[int, ...]] = {}
            original_nodes = self.node_count
            original_edges = self._edge_count
            deleted: List[int] = []
            inserted: List[int] = []
            skipped = 0

            def touch(node: int) -> None:
                if node not in before:
                    before[node] = tuple(self._out[node]) if node < original_nodes else ()

            try:
                for op in ops:
                    if op.kind is UpdateKind.INSERT_NODE:
                        node = self._append_node()
                        inserted.append(node)
                        touch(node)
                    elif op.kind is UpdateKind.DELETE_NODE:
                        self._check_node(op.src)
                        for src in list(self._in[op.src]):
                            touch(src)
                        touch(op.src)
                        self._delete_node(op.src)
                        deleted.append(op.src)
                    else:
                        self._check_node(op.src)
                        self._check_node(op.dst)
                        if not self._edge_op_applicable(op):
                            if strict:
                                raise GraphUpdateError(self._violation_message(op))
                            skipped += 1
                            self._logger.warning(f"Skipping inapplicable op {op}")
                            continue
                        for src, dst in self._arcs(op):
                            touch(src)
                            if op.kind is UpdateKind.INSERT_EDGE:
                                self._add_arc(src, dst)
                            else:
                                self._remove_arc(src, dst)
            except GraphUpdateError:
                self._rollback(before, original_nodes, original_edges, deleted)
                self._logger.error(f"Batch of {len(ops)} ops rejected; graph restored")
                raise

            rows: Dict[int, RowChange] = {}
            deleted_set = set(deleted)
            for node in sorted(before):
                old = before[node]
                new = tuple(self._out[node])
                if set(old) != set(new) or node in deleted_set:
                    rows[node] = RowChange(node, old, new)

            self._version += 1
            change_set = RowChangeSet(
                rows=rows, inserted_nodes=inserted, deleted_nodes=deleted, skipped_ops=skipped
            )
            self._logger.debug(
                f"Applied {len(ops)} ops: {len(rows)} rows modified, {skipped} skipped"
            )
            return change_set

    def _append_node(self) -> int:
        self._out.append([])
        self._in.append([])
        self._alive.append(True)
        return len(self._out) - 1

    def _check_node(self, node: int) -> None:
        if not isinstance(node, (int, np.integer)) or node < 0 or node >= self.node_count:
            raise GraphUpdateError(f"invalid node id {node} (node_count={self.node_count})")
        if not self._alive[node]:
            raise GraphUpdateError(f"node {node} has been deleted")

    def _arcs(self, op: UpdateOp) -> List[Tuple[int, int]]:
        if self.undirected and op.src != op.dst:
            return [(op.src, op.dst), (op.dst, op.src)]
        return [(op.src, op.dst)]

    def _edge_op_applicable(self, op: UpdateOp) -> bool:
        present = [self.has_edge(src, dst) for src, dst in self._arcs(op)]
        if op.kind is UpdateKind.INSERT_EDGE:
            return not any(present)
        return all(present)

    @staticmethod
    def _violation_message(op: UpdateOp) -> str:
        if op.kind is UpdateKind.INSERT_EDGE:
            return f"edge {op.src}->{op.dst} already present"
        return f"edge {op.src}->{op.dst} not present"

    def _add_arc(self, src: int, dst: int) -> None:
        insort(self._out[src], dst)
        insort(self._in[dst], src)
        self._edge_count += 1

    def _remove_arc(self, src: int, dst: int) -> None:
        _remove_sorted(self._out[src], dst)
        _remove_sorted(self._in[dst], src)
        self._edge_count -= 1

    def _delete_node(self, node: int) -> None:
        for src in list(self._in[node]):
            self._remove_arc(src, node)
        for dst in list(self._out[node]):
            self._remove_arc(node, dst)
        self._alive[node] = False

    def _rollback(
        self,
        before: Dict[int, Tuple[int, ...]],
        original_nodes: int,
        original_edges: int,
        deleted: List[int],
    ) -> None:
        for node in before:
            for dst in self._out[node]:
                _remove_sorted(self._in[dst], node)
        del self._out[original_nodes:]
        del self._in[original_nodes:]
        del self._alive[original_nodes:]
        for node, neighbors in before.items():
            if node >= original_nodes:
                continue
            self._out[node] = list(neighbors)
            for dst in neighbors:
                insort(self._in[dst], node)
        for node in deleted:
            if node < original_nodes:
                self._alive[node] = True
        self._edge_count = original_edges
        self._version += 1


def inverse_batch(ops: Sequence[UpdateOp]) -> List[UpdateOp]:
    """
    Operations undoing an edge-only batch.

    Args:
        ops: Batch made of edge inserts/deletes

    Returns:
        The batch reversed with each insert turned into a delete and vice versa

    Raises:
        ValueError: If the batch contains node operations
    """
    inverse: List[UpdateOp] = []
    for op in reversed(ops):
        if op.kind is UpdateKind.INSERT_EDGE:
            inverse.append(UpdateOp.delete_edge(op.src, op.dst))
        elif op.kind is UpdateKind.DELETE_EDGE:
            inverse.append(UpdateOp.insert_edge(op.src, op.dst))
        else:
            raise ValueError("node operations cannot be inverted")
    return inverse
