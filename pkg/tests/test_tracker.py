"""
Unit tests for the per-seed RWR tracker.
"""

import numpy as np
import pytest

from dynamic_rwr.config import DeadEndMode, PropagationConfig, TrackerOptions
from dynamic_rwr.errors import ConvergenceError, ParseError, SeedDeletionError, VectorShapeError
from dynamic_rwr.graph_store import DynamicGraph, UpdateOp
from dynamic_rwr.metrics import exact_oracle, l1_error
from dynamic_rwr.propagation import cpi_raw, theoretical_error_bound
from dynamic_rwr.stream_ingest import random_delete_batch, random_digraph, random_mixed_batch
from dynamic_rwr.tracker import RwrTracker
from conftest import make_graph


class TestInitialize:
    def test_three_cycle(self, three_cycle, exact_config):
        """Test that initialization stores the CPI result."""
        tracker = RwrTracker.initialize(three_cycle, 0, exact_config)
        np.testing.assert_allclose(tracker.r_raw.values, [0.3887, 0.3304, 0.2809], atol=1e-4)
        assert tracker.batches_applied == 0
        assert len(tracker.cumulative_stats) == 1

    def test_isolated_seed_is_raw(self, exact_config):
        """Test that the stored vector is not rescaled."""
        tracker = RwrTracker.initialize(DynamicGraph(1), 0, exact_config)
        np.testing.assert_allclose(tracker.r_raw.values, [0.15])
        assert tracker.raw_l1 == pytest.approx(0.15)

    def test_deterministic(self, three_cycle, exact_config):
        """Test that two initializations are bit-identical."""
        first = RwrTracker.initialize(three_cycle, 2, exact_config)
        second = RwrTracker.initialize(three_cycle, 2, exact_config)
        assert first.r_raw.values.tobytes() == second.r_raw.values.tobytes()


class TestUpdate:
    def test_empty_batch(self, three_cycle, exact_config):
        """Test that an empty batch changes nothing."""
        tracker = RwrTracker.initialize(three_cycle, 0, exact_config)
        before = tracker.r_raw.values.copy()
        stats = tracker.update(three_cycle, [])

        np.testing.assert_array_equal(tracker.r_raw.values, before)
        assert stats.iterations == 0
        assert tracker.batches_applied == 1

    def test_star_insert_matches_fresh_cpi(self, star, exact_config):
        """Test an insertion into the star against a fresh computation."""
        tracker = RwrTracker.initialize(star, 0, exact_config)
        stats = tracker.update(star, [UpdateOp.insert_edge(1, 0)])

        fresh, _ = cpi_raw(star, 0, exact_config)
        assert l1_error(tracker.r_raw, fresh) <= 1e-9
        assert stats.q_offset_l1 == pytest.approx(0.0541875)
        assert stats.mutation_time >= 0.0

    def test_sequential_deletions_do_not_drift(self, exact_config):
        """Test 200 single-edge deletions against the oracle on the final graph."""
        n = 100
        edges = [(i, (i + 1) % n) for i in range(n)] + random_digraph(n, 6.0, 3).edges
        graph, _ = DynamicGraph.from_edges(n, edges)
        tracker = RwrTracker.initialize(graph, 0, exact_config)

        for step in range(200):
            tracker.update(graph, random_delete_batch(graph, 1, step))

        oracle = exact_oracle(graph, 0, 0.15, DeadEndMode.NONE)
        assert l1_error(tracker.r_raw, oracle) <= 1e-8
        assert tracker.batches_applied == 200

    def test_new_nodes_extend_the_vector(self, three_cycle, exact_config):
        """Test that inserted nodes get scores after the batch."""
        tracker = RwrTracker.initialize(three_cycle, 0, exact_config)
        tracker.update(three_cycle, [UpdateOp.insert_node(), UpdateOp.insert_edge(0, 3)])

        assert len(tracker.r_raw) == 4
        oracle = exact_oracle(three_cycle, 0, 0.15, DeadEndMode.NONE)
        assert l1_error(tracker.r_raw, oracle) <= 1e-9

    def test_delete_node(self, exact_config):
        """Test that deleting a non-seed node is folded in exactly."""
        graph = make_graph(4, [(0, 1), (1, 2), (2, 0), (0, 3), (3, 2)])
        tracker = RwrTracker.initialize(graph, 0, exact_config)
        tracker.update(graph, [UpdateOp.delete_node(3)])

        oracle = exact_oracle(graph, 0, 0.15, DeadEndMode.NONE)
        assert l1_error(tracker.r_raw, oracle) <= 1e-9
        assert tracker.r_raw[3] == pytest.approx(0.0, abs=1e-10)

    def test_seed_deletion_rejected(self, three_cycle, exact_config):
        """Test that deleting the seed fails before the graph is touched."""
        tracker = RwrTracker.initialize(three_cycle, 1, exact_config)
        with pytest.raises(SeedDeletionError):
            tracker.update(three_cycle, [UpdateOp.delete_node(1)])
        assert three_cycle.is_alive(1)

    def test_seed_deletion_in_shared_change_set(self, three_cycle, exact_config):
        """Test that a change set deleting the seed is rejected."""
        tracker = RwrTracker.initialize(three_cycle, 1, exact_config)
        change_set = three_cycle.apply_batch([UpdateOp.delete_node(1)])
        with pytest.raises(SeedDeletionError):
            tracker.apply_change_set(three_cycle, change_set)

    def test_propagation_failure_falls_back_to_cpi(self, monkeypatch, three_cycle, exact_config):
        """Test that a failed offset propagation recomputes from scratch."""
        tracker = RwrTracker.initialize(three_cycle, 0, exact_config)

        def failing_propagation(*args, **kwargs):
            raise ConvergenceError("no convergence")

        monkeypatch.setattr("dynamic_rwr.tracker.propagate_offset", failing_propagation)
        stats = tracker.update(three_cycle, [UpdateOp.insert_edge(0, 2)])

        assert stats.refreshed_from_scratch
        fresh, _ = cpi_raw(three_cycle, 0, exact_config)
        np.testing.assert_array_equal(tracker.r_raw.values, fresh.values)

    def test_periodic_refresh(self, three_cycle, exact_config):
        """Test that refresh_every recomputes after the given number of batches."""
        tracker = RwrTracker.initialize(
            three_cycle, 0, exact_config, TrackerOptions(refresh_every=2)
        )
        tracker.update(three_cycle, [UpdateOp.insert_edge(0, 2)])
        tracker.update(three_cycle, [UpdateOp.delete_edge(0, 2)])

        assert tracker.cumulative_stats[-1].refreshed_from_scratch
        fresh, _ = cpi_raw(three_cycle, 0, exact_config)
        np.testing.assert_array_equal(tracker.r_raw.values, fresh.values)


class TestAccumulatedError:
    def test_approximate_batches_within_accumulated_bound(self):
        """Test that ten approximate batches stay within ten times epsilon / c."""
        config = PropagationConfig(c=0.15, epsilon=5e-3, dead_end_mode=DeadEndMode.NONE)
        bound = theoretical_error_bound(config)
        for instance in range(20):
            rng = np.random.default_rng(instance)
            n = int(rng.integers(20, 61))
            graph, _ = random_digraph(n, 4.0, instance).to_graph(n)
            seed = int(rng.integers(0, n))
            tracker = RwrTracker.initialize(graph, seed, config)

            for batch in range(10):
                ops = random_mixed_batch(graph, 5, 100 * instance + batch, protected=[seed])
                tracker.update(graph, ops)
                oracle = exact_oracle(graph, seed, 0.15, DeadEndMode.NONE)
                assert l1_error(tracker.r_raw, oracle) <= (tracker.batches_applied + 1) * bound
            assert l1_error(tracker.r_raw, oracle) <= 10 * bound

            tracker.refresh(graph)
            assert l1_error(tracker.r_raw, oracle) <= bound

    def test_exact_with_node_operations(self):
        """Test exact tracking through batches that insert and delete nodes."""
        config = PropagationConfig(c=0.15, epsilon=1e-12, dead_end_mode=DeadEndMode.NONE)
        for instance in range(100):
            rng = np.random.default_rng(700 + instance)
            n = int(rng.integers(5, 41))
            graph, _ = random_digraph(n, float(rng.uniform(1.0, 5.0)), instance).to_graph(n)
            seed = int(rng.integers(0, n))
            tracker = RwrTracker.initialize(graph, seed, config)

            for batch in range(5):
                ops = random_mixed_batch(
                    graph, 8, 10 * instance + batch, node_op_rate=0.3, protected=[seed]
                )
                stats = tracker.update(graph, ops)
                assert not stats.refreshed_from_scratch
            oracle = exact_oracle(graph, seed, 0.15, DeadEndMode.NONE)
            assert len(tracker.r_raw) == graph.node_count
            assert l1_error(tracker.r_raw, oracle) <= 1e-8, f"instance {instance}"


class TestQuery:
    def test_star_rescaled(self, star, exact_config):
        """Test that queries rescale the raw vector."""
        tracker = RwrTracker.initialize(star, 0, exact_config)
        scores = tracker.query()
        np.testing.assert_allclose(scores.values, [0.54054054, 0.22972973, 0.22972973], atol=1e-8)
        assert scores.l1 == pytest.approx(1.0, abs=1e-12)

    def test_none_mode_returns_raw(self, star, raw_config):
        """Test that the 'none' mode keeps leakage."""
        tracker = RwrTracker.initialize(star, 0, raw_config)
        np.testing.assert_allclose(tracker.query().values, [0.15, 0.06375, 0.06375])

    def test_no_dead_ends_close_to_raw(self, three_cycle):
        """Test that rescaling barely changes a vector without leakage."""
        config = PropagationConfig(c=0.15, epsilon=1e-6)
        tracker = RwrTracker.initialize(three_cycle, 0, config)
        assert l1_error(tracker.query(), tracker.r_raw) <= 1e-6 / 0.15


class TestRefresh:
    def test_refresh_untouched_tracker(self, three_cycle, exact_config):
        """Test that refreshing an untouched tracker gives the same vector."""
        tracker = RwrTracker.initialize(three_cycle, 0, exact_config)
        before = tracker.r_raw.values.tobytes()
        stats = tracker.refresh(three_cycle)
        assert tracker.r_raw.values.tobytes() == before
        assert stats.refreshed_from_scratch


class TestCheckpoint:
    def test_round_trip(self, tmp_path, star, exact_config):
        """Test saving and resuming a tracker."""
        tracker = RwrTracker.initialize(star, 0, exact_config)
        tracker.update(star, [UpdateOp.insert_edge(1, 0)])
        path = tmp_path / "seed0.ckpt"
        tracker.save_checkpoint(path)

        resumed = RwrTracker.load_checkpoint(path, star)
        assert resumed.seed == 0
        assert resumed.batches_applied == 1
        assert resumed.config.epsilon == exact_config.epsilon
        np.testing.assert_array_equal(resumed.r_raw.values, tracker.r_raw.values)

        resumed.update(star, [UpdateOp.delete_edge(1, 0)])
        fresh, _ = cpi_raw(star, 0, exact_config)
        assert l1_error(resumed.r_raw, fresh) <= 1e-9

    def test_missing_header(self, tmp_path, star):
        """Test that a plain score dump is not accepted as a checkpoint."""
        path = tmp_path / "plain.txt"
        path.write_text("0 0.5\n1 0.25\n2 0.25\n")
        with pytest.raises(ParseError, match="rwr-checkpoint"):
            RwrTracker.load_checkpoint(path, star)

    def test_node_count_mismatch(self, tmp_path, star, exact_config):
        """Test that a checkpoint for another graph size is rejected."""
        tracker = RwrTracker.initialize(star, 0, exact_config)
        path = tmp_path / "seed0.ckpt"
        tracker.save_checkpoint(path)
        star.add_node()
        with pytest.raises(VectorShapeError):
            RwrTracker.load_checkpoint(path, star)
