"""
Shared fixtures and graph helpers for the dynamic RWR tests.
"""

from typing import Iterable, Tuple

import pytest

from dynamic_rwr.config import DeadEndMode, PropagationConfig
from dynamic_rwr.graph_store import DynamicGraph
from dynamic_rwr.stream_ingest import power_law_edges


def make_graph(node_count: int, edges: Iterable[Tuple[int, int]]) -> DynamicGraph:
    """Build a directed graph, failing on duplicate edges."""
    graph, _ = DynamicGraph.from_edges(node_count, edges, lenient=False)
    return graph


@pytest.fixture
def three_cycle():
    """Directed 3-cycle 0->1->2->0."""
    return make_graph(3, [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def star():
    """Node 0 pointing at the dead-ends 1 and 2."""
    return make_graph(3, [(0, 1), (0, 2)])


@pytest.fixture
def exact_config():
    return PropagationConfig(c=0.15, epsilon=1e-12)


@pytest.fixture
def raw_config():
    """Tight tolerance, no dead-end rescaling."""
    return PropagationConfig(c=0.15, epsilon=1e-12, dead_end_mode=DeadEndMode.NONE)


@pytest.fixture(scope="session")
def power_law_graph():
    """Synthetic power-law digraph with 10^4 nodes and about 10^5 edges."""
    stream = power_law_edges(10_000, 10.0, rng_seed=7)
    graph, _ = stream.to_graph(10_000)
    return graph
