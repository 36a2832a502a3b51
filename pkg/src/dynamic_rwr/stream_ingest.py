"""
Edge-stream ingestion and synthetic workload generation.

Parses SNAP-style edge lists and update streams, slices a stream into an
initial graph plus snapshot batches, and generates random graphs and
update batches for benchmarks and tests. Every randomized function takes
an explicit ``rng_seed`` and is deterministic given it.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, Field

from .errors import ParseError
from .graph_store import DynamicGraph, UpdateKind, UpdateOp

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


@dataclass
class EdgeStream:
    """
    Ordered edge sequence.

    Attributes:
        edges: ``(src, dst)`` pairs in source order
        undirected: Whether each pair denotes an undirected edge
        id_map: Original id -> dense id, when ids were compacted
    """

    edges: List[Edge] = field(default_factory=list)
    undirected: bool = False
    id_map: Optional[Dict[int, int]] = None

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def node_count(self) -> int:
        """``max id + 1`` (0 for an empty stream)."""
        if not self.edges:
            return 0
        return max(max(src, dst) for src, dst in self.edges) + 1

    def deduplicated(self) -> Tuple["EdgeStream", int]:
        """
        Drop repeated edges, keeping first occurrences.

        For undirected streams ``(u, v)`` and ``(v, u)`` are the same edge.

        Returns:
            The filtered stream and the number of dropped pairs
        """
        seen: Set[Edge] = set()
        kept: List[Edge] = []
        for src, dst in self.edges:
            key = (min(src, dst), max(src, dst)) if self.undirected else (src, dst)
            if key in seen:
                continue
            seen.add(key)
            kept.append((src, dst))
        return EdgeStream(kept, self.undirected, self.id_map), len(self.edges) - len(kept)

    def to_graph(self, node_count: Optional[int] = None) -> Tuple[DynamicGraph, int]:
        """Build a graph, skipping duplicates; returns the graph and skip count."""
        return DynamicGraph.from_edges(
            node_count if node_count is not None else self.node_count,
            self.edges,
            undirected=self.undirected,
            lenient=True,
        )


class SnapshotPlan(BaseModel):
    """
    How a stream is split into an initial graph and update snapshots.

    With ``shrink`` set the initial graph holds the whole stream and the
    snapshots delete the edges a growing plan would have inserted.
    """

    initial_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    snapshot_count: int = Field(10, ge=1)
    rng_seed: int = 0
    shrink: bool = False

    def initial_size(self, stream_length: int) -> int:
        return int(self.initial_fraction * stream_length)

    def check(self, stream_length: int) -> None:
        """
        Raise ``ValueError`` if a stream of this length cannot be split.
        """
        initial = self.initial_size(stream_length)
        if initial < 1:
            raise ValueError(
                f"stream of {stream_length} edges leaves no initial graph "
                f"at fraction {self.initial_fraction}"
            )
        if stream_length - initial < self.snapshot_count:
            raise ValueError(
                f"{stream_length - initial} remaining edges cannot fill "
                f"{self.snapshot_count} non-empty snapshots"
            )


def _parse_int(token: str, line_number: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ParseError(f"non-integer token {token!r}", line_number) from None
    if value < 0:
        raise ParseError(f"negative node id {value}", line_number)
    return value


def parse_edge_list(text: str, undirected: bool = False) -> EdgeStream:
    """
    Parse ``src dst`` lines (any whitespace separator).

    Lines starting with ``#`` and blank lines are ignored. Duplicates are
    kept; they are dropped when the graph is built.

    Raises:
        ParseError: On wrong arity or non-integer tokens
    """
    edges: List[Edge] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 2 fields, got {len(tokens)}", line_number)
        edges.append((_parse_int(tokens[0], line_number), _parse_int(tokens[1], line_number)))
    return EdgeStream(edges, undirected)


def read_edge_list(path: Union[str, Path], undirected: bool = False) -> EdgeStream:
    return parse_edge_list(Path(path).read_text(encoding="utf-8"), undirected)


def serialize_edge_stream(stream: EdgeStream) -> str:
    """Render a stream in the edge-list format."""
    return "".join(f"{src} {dst}\n" for src, dst in stream.edges)


def parse_update_stream(text: str) -> List[UpdateOp]:
    """
    Parse an update stream.

    Line forms: ``+ u v`` (insert edge), ``- u v`` (delete edge), ``+n``
    (insert node), ``-n u`` (delete node); ``#`` starts a comment line.

    Raises:
        ParseError: On unknown ops or wrong arity
    """
    ops: List[UpdateOp] = []
    arity = {"+": 2, "-": 2, "+n": 0, "-n": 1}

    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        symbol, args = tokens[0], tokens[1:]
        if symbol not in arity:
            raise ParseError(f"unknown operation {symbol!r}", line_number)
        if len(args) != arity[symbol]:
            raise ParseError(
                f"{symbol!r} takes {arity[symbol]} arguments, got {len(args)}", line_number
            )
        ids = [_parse_int(token, line_number) for token in args]

        if symbol == "+":
            ops.append(UpdateOp.insert_edge(ids[0], ids[1]))
        elif symbol == "-":
            ops.append(UpdateOp.delete_edge(ids[0], ids[1]))
        elif symbol == "+n":
            ops.append(UpdateOp.insert_node())
        else:
            ops.append(UpdateOp.delete_node(ids[0]))
    return ops


def read_update_stream(path: Union[str, Path]) -> List[UpdateOp]:
    return parse_update_stream(Path(path).read_text(encoding="utf-8"))


def serialize_update_stream(ops: Sequence[UpdateOp]) -> str:
    """Render ops in the update-stream format."""
    lines = []
    for op in ops:
        if op.kind is UpdateKind.INSERT_EDGE:
            lines.append(f"+ {op.src} {op.dst}\n")
        elif op.kind is UpdateKind.DELETE_EDGE:
            lines.append(f"- {op.src} {op.dst}\n")
        elif op.kind is UpdateKind.INSERT_NODE:
            lines.append("+n\n")
        else:
            lines.append(f"-n {op.src}\n")
    return "".join(lines)


def compact_ids(stream: EdgeStream) -> EdgeStream:
    """
    Remap ids to dense ``0..n-1`` in ascending order of the original ids.

    Returns:
        Remapped stream with ``id_map`` set (original -> dense)
    """
    originals = sorted({node for edge in stream.edges for node in edge})
    id_map = {original: dense for dense, original in enumerate(originals)}
    edges = [(id_map[src], id_map[dst]) for src, dst in stream.edges]
    return EdgeStream(edges, stream.undirected, id_map)


def write_id_map(path: Union[str, Path], id_map: Dict[int, int]) -> None:
    """Write the ``original_id dense_id`` sidecar."""
    ordered = sorted(id_map.items(), key=lambda item: item[1])
    text = "".join(f"{original} {dense}\n" for original, dense in ordered)
    Path(path).write_text(text, encoding="utf-8")


def read_id_map(path: Union[str, Path]) -> Dict[int, int]:
    stream = read_edge_list(path)
    return {original: dense for original, dense in stream.edges}


def make_snapshots(
    stream: EdgeStream, plan: SnapshotPlan
) -> Tuple[List[Edge], List[List[UpdateOp]]]:
    """
    Shuffle the stream and cut it into an initial part and ``k`` batches.

    The first ``floor(initial_fraction * len)`` shuffled edges form the
    initial graph; the rest is split into ``k`` contiguous insert batches,
    the last one taking the remainder. A shrinking plan starts from every
    edge (duplicates dropped) and deletes the same tail, so the final graph
    is the initial graph of the growing plan.

    Raises:
        ValueError: If the stream is too short for the plan
    """
    if plan.shrink:
        stream, _ = stream.deduplicated()
    plan.check(len(stream))
    rng = np.random.default_rng(plan.rng_seed)
    order = rng.permutation(len(stream))
    shuffled = [stream.edges[i] for i in order]

    initial_size = plan.initial_size(len(stream))
    rest = shuffled[initial_size:]
    initial = shuffled if plan.shrink else shuffled[:initial_size]
    make_op = UpdateOp.delete_edge if plan.shrink else UpdateOp.insert_edge

    per_batch = len(rest) // plan.snapshot_count
    batches: List[List[UpdateOp]] = []
    for index in range(plan.snapshot_count):
        start = index * per_batch
        stop = len(rest) if index == plan.snapshot_count - 1 else start + per_batch
        batches.append([make_op(src, dst) for src, dst in rest[start:stop]])
    return initial, batches


def _logical_edges(graph: DynamicGraph) -> List[Edge]:
    if graph.undirected:
        return [(src, dst) for src, dst in graph.edges() if src <= dst]
    return list(graph.edges())


def random_delete_batch(graph: DynamicGraph, count: int, rng_seed: int) -> List[UpdateOp]:
    """
    Sample ``count`` distinct existing edges as deletions.

    Raises:
        ValueError: If ``count`` exceeds the number of edges
    """
    edges = _logical_edges(graph)
    if count < 0 or count > len(edges):
        raise ValueError(f"cannot delete {count} of {len(edges)} edges")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(edges), size=count, replace=False)
    return [UpdateOp.delete_edge(*edges[int(i)]) for i in picks]


def random_mixed_batch(
    graph: DynamicGraph,
    size: int,
    rng_seed: int,
    node_op_rate: float = 0.0,
    protected: Sequence[int] = (),
) -> List[UpdateOp]:
    """
    Random inserts and deletes, each applicable when reached in sequence.

    The graph itself is not modified.

    Args:
        graph: Graph the batch will be applied to
        size: Number of ops
        rng_seed: Generator seed
        node_op_rate: Share of ops that insert or delete a node instead of
            an edge
        protected: Nodes never deleted (typically tracked seeds)
    """
    rng = np.random.default_rng(rng_seed)
    nodes = graph.alive_nodes()
    edges = _logical_edges(graph)
    present = set(edges)
    keep = set(protected)
    next_node = graph.node_count
    ops: List[UpdateOp] = []

    def key(src: int, dst: int) -> Edge:
        return (min(src, dst), max(src, dst)) if graph.undirected else (src, dst)

    while len(ops) < size:
        if (node_op_rate and rng.random() < node_op_rate) or not nodes:
            deletable = [node for node in nodes if node not in keep]
            if nodes and deletable and rng.random() < 0.5:
                node = deletable[int(rng.integers(0, len(deletable)))]
                nodes.remove(node)
                edges = [edge for edge in edges if node not in edge]
                present = set(edges)
                ops.append(UpdateOp.delete_node(node))
            else:
                nodes.append(next_node)
                next_node += 1
                ops.append(UpdateOp.insert_node())
            continue

        max_edges = len(nodes) * len(nodes)
        insert = (rng.random() < 0.5 or not edges) and len(present) < max_edges
        if insert:
            src, dst = (int(nodes[i]) for i in rng.integers(0, len(nodes), size=2))
            if key(src, dst) in present:
                continue
            present.add(key(src, dst))
            edges.append(key(src, dst))
            ops.append(UpdateOp.insert_edge(src, dst))
        elif edges:
            index = int(rng.integers(0, len(edges)))
            src, dst = edges[index]
            edges[index] = edges[-1]
            edges.pop()
            present.discard((src, dst))
            ops.append(UpdateOp.delete_edge(src, dst))
        else:
            break
    return ops


def _unique_pairs(src: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    keys = src.astype(np.int64) * n + dst.astype(np.int64)
    _, first = np.unique(keys, return_index=True)
    return keys[np.sort(first)]


def power_law_edges(
    n: int, avg_degree: float, rng_seed: int, exponent: float = 2.5
) -> EdgeStream:
    """
    Directed Chung-Lu graph with power-law expected degrees.

    Sources and targets are drawn independently with weights
    ``(i + 1) ** (-1 / (exponent - 1))`` (targets use a shuffled weight
    assignment). Self-loops and duplicates are rejected until
    ``round(n * avg_degree)`` distinct arcs are collected.

    Args:
        n: Node count
        avg_degree: Mean out-degree
        rng_seed: Generator seed
        exponent: Power-law exponent (> 1)
    """
    if exponent <= 1.0:
        raise ValueError("exponent must exceed 1")
    target = min(int(round(n * avg_degree)), n * (n - 1))
    rng = np.random.default_rng(rng_seed)
    weights = (np.arange(n, dtype=np.float64) + 1.0) ** (-1.0 / (exponent - 1.0))
    p_out = weights / weights.sum()
    p_in = rng.permutation(weights) / weights.sum()

    keys = np.zeros(0, dtype=np.int64)
    while keys.size < target:
        draw = int((target - keys.size) * 1.3) + 16
        src = rng.choice(n, size=draw, p=p_out)
        dst = rng.choice(n, size=draw, p=p_in)
        mask = src != dst
        candidates = src[mask].astype(np.int64) * n + dst[mask].astype(np.int64)
        merged = np.concatenate([keys, candidates])
        _, first = np.unique(merged, return_index=True)
        keys = merged[np.sort(first)]
    keys = keys[:target]
    edges = [(int(k // n), int(k % n)) for k in keys]
    logger.debug(f"Generated power-law graph: n={n}, m={len(edges)}")
    return EdgeStream(edges)


def random_digraph(
    n: int, density: float, rng_seed: int, dead_end_fraction: float = 0.0
) -> EdgeStream:
    """
    Uniform random digraph with about ``density`` out-edges per node.

    A ``dead_end_fraction`` share of the nodes gets no out-edges. Self-loops
    may occur; duplicates do not.
    """
    rng = np.random.default_rng(rng_seed)
    dead_count = int(round(dead_end_fraction * n))
    sources = np.sort(rng.permutation(n)[dead_count:]) if dead_count else np.arange(n)
    if sources.size == 0:
        return EdgeStream([])
    target = min(int(round(n * density)), sources.size * n)

    keys = np.zeros(0, dtype=np.int64)
    while keys.size < target:
        draw = int((target - keys.size) * 1.3) + 8
        src = sources[rng.integers(0, sources.size, size=draw)]
        dst = rng.integers(0, n, size=draw)
        keys = _unique_pairs(
            np.concatenate([keys // n, src]), np.concatenate([keys % n, dst]), n
        )
    keys = keys[:target]
    return EdgeStream([(int(k // n), int(k % n)) for k in keys])
