"""
Unit tests for CPI and offset score propagation.
"""

import math

import numpy as np
import pytest

from dynamic_rwr.config import DeadEndMode, PropagationConfig
from dynamic_rwr.errors import (
    ConvergenceError,
    CorruptStateError,
    GraphUpdateError,
    VectorShapeError,
)
from dynamic_rwr.graph_store import DynamicGraph, RowChangeSet, UpdateOp, row_change_l1
from dynamic_rwr.metrics import exact_oracle, l1_error
from dynamic_rwr.propagation import (
    ScoreVector,
    SignedScoreVector,
    compute_offset_seed,
    cpi,
    cpi_raw,
    dead_end_rescale,
    fixed_point_residual,
    osp_merge,
    propagate_offset,
    spmv_transpose_normalized,
    theoretical_error_bound,
    theoretical_iteration_bound,
)
from dynamic_rwr.stream_ingest import random_digraph, random_mixed_batch
from conftest import make_graph

STAR_RAW = [0.15, 0.06375, 0.06375]


def ring_graph(n: int, extra_density: float, rng_seed: int) -> DynamicGraph:
    """Random digraph plus a Hamiltonian cycle, so no node is a dead-end."""
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += random_digraph(n, extra_density, rng_seed).edges
    graph, _ = DynamicGraph.from_edges(n, edges)
    return graph


class TestScoreVectors:
    def test_values_are_read_only_copies(self):
        """Test that vectors copy and freeze their input."""
        source = np.array([0.5, 0.5])
        vector = ScoreVector(source)
        source[0] = 9.0
        assert vector[0] == 0.5
        with pytest.raises(ValueError):
            vector.values[0] = 1.0

    def test_negative_scores_rejected(self):
        """Test that RWR vectors cannot hold negative entries."""
        with pytest.raises(CorruptStateError):
            ScoreVector(np.array([0.5, -0.1]))

    def test_signed_vector_l1_and_total(self):
        """Test the L1 mass and signed sum of an offset vector."""
        vector = SignedScoreVector(np.array([0.25, -0.5, 0.25]))
        assert vector.l1 == pytest.approx(1.0)
        assert vector.total() == pytest.approx(0.0)

    def test_extended_pads_with_zeros(self):
        """Test that extension appends zero entries."""
        extended = ScoreVector(np.array([0.2, 0.8])).extended(4)
        np.testing.assert_array_equal(extended.values, [0.2, 0.8, 0.0, 0.0])
        with pytest.raises(VectorShapeError):
            extended.extended(2)


class TestSpmv:
    def test_single_arc(self, three_cycle):
        """Test one push along the cycle."""
        y = spmv_transpose_normalized(three_cycle, np.array([0.15, 0.0, 0.0]), 0.15)
        np.testing.assert_allclose(y.values, [0.0, 0.1275, 0.0])

    def test_even_split(self, star):
        """Test that mass splits evenly over out-edges."""
        y = spmv_transpose_normalized(star, np.array([1.0, 0.0, 0.0]), 0.15)
        np.testing.assert_allclose(y.values, [0.0, 0.425, 0.425])

    def test_zero_vector(self, star):
        """Test linearity on the zero vector."""
        y = spmv_transpose_normalized(star, np.zeros(3), 0.15)
        assert y.l1 == 0.0

    def test_length_mismatch(self, star):
        """Test that a vector of the wrong length is rejected."""
        with pytest.raises(VectorShapeError):
            spmv_transpose_normalized(star, np.zeros(2), 0.15)


class TestCpi:
    def test_three_cycle(self, three_cycle, exact_config):
        """Test CPI against the closed form on a 3-cycle."""
        scores, stats = cpi(three_cycle, 0, exact_config)
        r0 = 0.15 / (1 - 0.85**3)
        np.testing.assert_allclose(scores.values, [r0, 0.85 * r0, 0.85**2 * r0], atol=1e-10)
        np.testing.assert_allclose(scores.values, [0.3887, 0.3304, 0.2809], atol=1e-4)
        assert stats.iterations > 0
        assert stats.interim_l1[0] == pytest.approx(0.15)

    def test_isolated_seed(self, exact_config):
        """Test that an isolated seed gets all the mass."""
        graph = DynamicGraph(1)
        scores, stats = cpi(graph, 0, exact_config)
        np.testing.assert_allclose(scores.values, [1.0])
        raw, _ = cpi_raw(graph, 0, exact_config)
        np.testing.assert_allclose(raw.values, [0.15])

    def test_star_rescaled(self, star, exact_config):
        """Test dead-end rescaling on a star."""
        raw, _ = cpi_raw(star, 0, exact_config)
        np.testing.assert_allclose(raw.values, STAR_RAW, atol=1e-12)

        scores, _ = cpi(star, 0, exact_config)
        np.testing.assert_allclose(scores.values, [0.54054054, 0.22972973, 0.22972973], atol=1e-8)
        assert scores.l1 == pytest.approx(1.0, abs=1e-12)

    def test_no_rescale_mode_keeps_leakage(self, star, raw_config):
        """Test that the 'none' mode returns the raw accumulation."""
        scores, _ = cpi(star, 0, raw_config)
        assert scores.l1 == pytest.approx(0.2775)

    def test_visited_edges_counts_out_degrees(self, star, exact_config):
        """Test that only the seed's out-edges are visited on a star."""
        _, stats = cpi(star, 0, exact_config)
        assert stats.visited_edges == 2
        assert stats.iterations == 2

    def test_deleted_seed(self, three_cycle, exact_config):
        """Test that a deleted seed is rejected."""
        three_cycle.apply_batch([UpdateOp.delete_node(0)])
        with pytest.raises(GraphUpdateError):
            cpi(three_cycle, 0, exact_config)

    def test_convergence_error_carries_stats(self, three_cycle):
        """Test that hitting the iteration cap raises with partial stats."""
        config = PropagationConfig(c=0.15, epsilon=1e-12, max_iterations=3)
        with pytest.raises(ConvergenceError) as excinfo:
            cpi(three_cycle, 0, config)
        assert excinfo.value.stats is not None
        assert excinfo.value.stats.iterations == 3

    def test_fixed_point_residual(self):
        """Test the residual bound of finished CPI runs on graphs without dead-ends."""
        for trial in range(20):
            graph = ring_graph(40, 3.0, trial)
            for epsilon in (1e-4, 1e-9):
                config = PropagationConfig(c=0.2, epsilon=epsilon)
                raw, _ = cpi_raw(graph, trial % 40, config)
                assert fixed_point_residual(graph, raw, trial % 40, 0.2) <= 2 * epsilon

    def test_deterministic(self, three_cycle, exact_config):
        """Test that repeated runs are bit-identical."""
        first, _ = cpi_raw(three_cycle, 1, exact_config)
        second, _ = cpi_raw(three_cycle, 1, exact_config)
        assert first.values.tobytes() == second.values.tobytes()


class TestOffsetSeed:
    def test_empty_change_set(self):
        """Test that no change gives a zero offset seed."""
        q = compute_offset_seed(RowChangeSet(), np.array(STAR_RAW), 0.15)
        assert q.l1 == 0.0

    def test_dead_end_gains_edge(self, star):
        """Test the offset seed of inserting 1->0 into the star."""
        change_set = star.apply_batch([UpdateOp.insert_edge(1, 0)])
        q = compute_offset_seed(change_set, np.array(STAR_RAW), 0.15)
        np.testing.assert_allclose(q.values, [0.0541875, 0.0, 0.0])

    def test_degree_drop_has_negative_entry(self, star):
        """Test the offset seed of deleting 0->2 from the star."""
        change_set = star.apply_batch([UpdateOp.delete_edge(0, 2)])
        q = compute_offset_seed(change_set, np.array(STAR_RAW), 0.15)
        np.testing.assert_allclose(q.values, [0.0, 0.06375, -0.06375])
        assert q.total() == pytest.approx(0.0)

    def test_vector_too_short(self, star):
        """Test that a vector not extended to new nodes is rejected."""
        change_set = star.apply_batch([UpdateOp.insert_node(), UpdateOp.insert_edge(0, 3)])
        with pytest.raises(VectorShapeError):
            compute_offset_seed(change_set, np.array(STAR_RAW), 0.15)


class TestPropagateOffset:
    def test_zero_seed(self, star, exact_config):
        """Test that a zero offset seed performs no multiply."""
        r_offset, stats = propagate_offset(star, np.zeros(3), exact_config)
        assert r_offset.l1 == 0.0
        assert stats.iterations == 0
        assert stats.visited_edges == 0

    def test_guard_fires_on_seed(self, three_cycle):
        """Test that a seed under epsilon is returned unchanged."""
        config = PropagationConfig(c=0.15, epsilon=1e-3)
        q = np.array([5e-4, -2e-4, 0.0])
        r_offset, stats = propagate_offset(three_cycle, q, config)
        np.testing.assert_array_equal(r_offset.values, q)
        assert stats.iterations == 0
        assert stats.q_offset_l1 == pytest.approx(7e-4)

    def test_back_edge_round_trips(self, exact_config):
        """Test the offset propagation for the star with a back edge 1->0."""
        graph = make_graph(3, [(0, 1), (0, 2), (1, 0)])
        r_offset, _ = propagate_offset(graph, np.array([0.0541875, 0.0, 0.0]), exact_config)

        expected_root = 0.0541875 / (1 - 0.85**2 / 2)
        assert r_offset[0] == pytest.approx(expected_root, abs=1e-10)
        assert r_offset[1] == pytest.approx(0.85 * expected_root / 2, abs=1e-10)
        assert r_offset[2] == pytest.approx(r_offset[1], abs=1e-12)


class TestOspMerge:
    def test_zero_offset(self):
        """Test that a zero offset leaves the scores unchanged."""
        merged = osp_merge(np.array(STAR_RAW), np.zeros(3))
        np.testing.assert_array_equal(merged.values, STAR_RAW)

    def test_star_insert_matches_fresh_cpi(self, star, exact_config):
        """Test that old scores plus offset equal a fresh run on the updated graph."""
        r_old, _ = cpi_raw(star, 0, exact_config)
        change_set = star.apply_batch([UpdateOp.insert_edge(1, 0)])
        q = compute_offset_seed(change_set, r_old, 0.15)
        r_offset, _ = propagate_offset(star, q, exact_config)
        merged = osp_merge(r_old, r_offset)

        fresh, _ = cpi_raw(star, 0, exact_config)
        assert l1_error(merged, fresh) <= 1e-9
        root = 0.15 / (1 - 0.85**2 / 2)
        np.testing.assert_allclose(merged.values, [root, 0.425 * root, 0.425 * root], atol=1e-9)

    def test_clamps_rounding_noise(self):
        """Test that tiny negatives are clamped to zero."""
        merged = osp_merge(np.array([0.5, 0.0]), np.array([0.0, -5e-10]))
        np.testing.assert_array_equal(merged.values, [0.5, 0.0])

    def test_rejects_real_negatives(self):
        """Test that a clearly negative merge signals corrupted state."""
        with pytest.raises(CorruptStateError, match="node 1"):
            osp_merge(np.array([0.5, 0.0]), np.array([0.0, -1e-3]))

    def test_length_mismatch(self):
        """Test that vectors of different length cannot merge."""
        with pytest.raises(VectorShapeError):
            osp_merge(np.zeros(2), np.zeros(3))


class TestDeadEndRescale:
    def test_star(self):
        """Test rescaling the raw star vector."""
        scores = dead_end_rescale(np.array(STAR_RAW))
        np.testing.assert_allclose(scores.values, [0.54054054, 0.22972973, 0.22972973], atol=1e-8)

    def test_unit_vector_unchanged(self):
        """Test that a unit-mass vector is a fixed point."""
        np.testing.assert_allclose(dead_end_rescale(np.array([0.25, 0.75])).values, [0.25, 0.75])

    def test_zero_vector(self):
        """Test that a zero vector cannot be rescaled."""
        with pytest.raises(CorruptStateError):
            dead_end_rescale(np.zeros(3))


class TestTheoreticalBounds:
    @pytest.mark.parametrize(
        "epsilon, expected", [(2.0, 0), (1e-9, 132), (5e-3, 37)]
    )
    def test_iteration_bound(self, epsilon, expected):
        """Test the iteration ceiling at c = 0.15."""
        config = PropagationConfig(c=0.15, epsilon=epsilon)
        assert theoretical_iteration_bound(config) == expected

    @pytest.mark.parametrize(
        "epsilon, expected", [(5e-3, 0.0333333), (1e-4, 6.667e-4), (0.15, 1.0)]
    )
    def test_error_bound(self, epsilon, expected):
        """Test the epsilon / c error bound at c = 0.15."""
        config = PropagationConfig(c=0.15, epsilon=epsilon)
        assert theoretical_error_bound(config) == pytest.approx(expected, rel=1e-3)


class TestOffsetExactness:
    def test_matches_dense_oracle_on_random_batches(self):
        """Test exact OSP against a dense solve on 200 random graphs and mixed batches."""
        config = PropagationConfig(c=0.15, epsilon=1e-12, dead_end_mode=DeadEndMode.NONE)
        bound = theoretical_iteration_bound(config)

        for instance in range(200):
            rng = np.random.default_rng(instance)
            n = int(rng.integers(5, 101))
            graph, _ = random_digraph(n, float(rng.uniform(1.0, 10.0)), instance).to_graph(n)
            seed = int(rng.integers(0, n))
            r_old, _ = cpi_raw(graph, seed, config)

            ops = random_mixed_batch(graph, int(rng.integers(1, 21)), instance)
            change_set = graph.apply_batch(ops)
            q = compute_offset_seed(change_set, r_old, config.c)
            r_offset, stats = propagate_offset(graph, q, config)
            r_new = osp_merge(r_old, r_offset)

            oracle = exact_oracle(graph, seed, config.c, DeadEndMode.NONE)
            assert l1_error(r_new, oracle) <= 1e-8, f"instance {instance}"
            assert stats.iterations <= bound

    @pytest.mark.parametrize("c", [0.15, 0.3, 0.5])
    @pytest.mark.parametrize("epsilon", [1e-2, 1e-3, 1e-4])
    def test_approximate_error_within_bound(self, c, epsilon):
        """Test that approximate single updates stay within epsilon / c and the iteration bound."""
        approx = PropagationConfig(c=c, epsilon=epsilon, dead_end_mode=DeadEndMode.NONE)
        exact = approx.with_epsilon(1e-12)
        error_bound = theoretical_error_bound(approx)
        iteration_ceiling = theoretical_iteration_bound(approx)
        assert iteration_ceiling == math.ceil(math.log(epsilon / 2) / math.log(1 - c))

        for instance in range(100):
            rng = np.random.default_rng(1000 + instance)
            n = int(rng.integers(5, 41))
            graph, _ = random_digraph(n, float(rng.uniform(1.0, 5.0)), instance).to_graph(n)
            seed = int(rng.integers(0, n))
            r_old, _ = cpi_raw(graph, seed, exact)

            change_set = graph.apply_batch(random_mixed_batch(graph, 1, instance))
            q = compute_offset_seed(change_set, r_old, c)
            r_offset, stats = propagate_offset(graph, q, approx)
            r_new = osp_merge(r_old, r_offset)

            oracle = exact_oracle(graph, seed, c, DeadEndMode.NONE)
            assert l1_error(r_new, oracle) <= error_bound
            assert stats.iterations <= iteration_ceiling


def offset_instance(instance: int, config: PropagationConfig):
    """Old raw scores, a mixed batch with node ops applied, and its change set."""
    rng = np.random.default_rng(5000 + instance)
    n = int(rng.integers(5, 61))
    graph, _ = random_digraph(
        n, float(rng.uniform(1.0, 6.0)), instance, dead_end_fraction=0.1
    ).to_graph(n)
    seed = int(rng.integers(0, n))
    r_old, _ = cpi_raw(graph, seed, config)
    ops = random_mixed_batch(
        graph, int(rng.integers(1, 16)), instance, node_op_rate=0.2, protected=[seed]
    )
    change_set = graph.apply_batch(ops)
    return graph, r_old.extended(graph.node_count), change_set


class TestInterimDecay:
    def test_cpi_interim_mass_decays_geometrically(self):
        """Test that every CPI interim vector is at most (1 - c) times the previous one."""
        for instance in range(50):
            rng = np.random.default_rng(instance)
            n = int(rng.integers(5, 81))
            c = float(rng.uniform(0.05, 0.5))
            config = PropagationConfig(c=c, epsilon=1e-10)
            graph, _ = random_digraph(
                n, float(rng.uniform(1.0, 8.0)), instance, dead_end_fraction=0.2
            ).to_graph(n)

            _, stats = cpi_raw(graph, int(rng.integers(0, n)), config)
            norms = stats.interim_l1
            assert len(norms) == stats.iterations + 1
            assert norms[0] == pytest.approx(c)
            assert all(b <= (1 - c) * a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))

    def test_offset_interim_mass_decays_geometrically(self):
        """Test the same decay for signed offset propagation."""
        config = PropagationConfig(c=0.15, epsilon=1e-11, dead_end_mode=DeadEndMode.NONE)
        for instance in range(50):
            graph, r_old, change_set = offset_instance(instance, config)
            q = compute_offset_seed(change_set, r_old, config.c)
            _, stats = propagate_offset(graph, q, config)

            norms = stats.interim_l1
            assert norms[0] == pytest.approx(q.l1)
            assert all(b <= 0.85 * a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


class TestOffsetSeedProperties:
    def test_signed_mass_balance(self):
        """Test that the offset seed moves exactly the mass of rows gaining or losing all edges."""
        config = PropagationConfig(c=0.15, epsilon=1e-12, dead_end_mode=DeadEndMode.NONE)
        for instance in range(100):
            _, r_old, change_set = offset_instance(instance, config)
            q = compute_offset_seed(change_set, r_old, config.c)

            expected = 0.85 * sum(
                r_old[change.node] * (int(change.new_degree > 0) - int(change.old_degree > 0))
                for change in change_set
            )
            assert q.total() == pytest.approx(expected, abs=1e-12)

    def test_seed_mass_within_row_change_bound(self):
        """Test that ||q_offset||_1 never exceeds (1 - c) ||D r_old||_1."""
        config = PropagationConfig(c=0.15, epsilon=1e-12, dead_end_mode=DeadEndMode.NONE)
        for instance in range(100):
            _, r_old, change_set = offset_instance(instance, config)
            q = compute_offset_seed(change_set, r_old, config.c)
            assert q.l1 <= row_change_l1(change_set, r_old.values, config.c) + 1e-12


class TestOffsetLinearity:
    def test_propagation_is_linear_in_the_seed(self):
        """Test that propagating a combination equals combining the propagations."""
        config = PropagationConfig(c=0.15, epsilon=1e-13, dead_end_mode=DeadEndMode.NONE)
        for instance in range(30):
            rng = np.random.default_rng(instance)
            n = int(rng.integers(5, 61))
            graph = ring_graph(n, float(rng.uniform(0.5, 4.0)), instance)
            first = rng.normal(size=n) * 0.01
            second = rng.normal(size=n) * 0.01

            combined, _ = propagate_offset(graph, first + 2.5 * second, config)
            r_first, _ = propagate_offset(graph, first, config)
            r_second, _ = propagate_offset(graph, second, config)
            np.testing.assert_allclose(
                combined.values, r_first.values + 2.5 * r_second.values, atol=1e-10
            )


class TestRescaleOrder:
    def test_rescaling_preserves_ranking(self):
        """Test that rescaled scores are ordered like the raw ones."""
        config = PropagationConfig(c=0.15, epsilon=1e-9, dead_end_mode=DeadEndMode.NONE)
        for instance in range(30):
            rng = np.random.default_rng(instance)
            n = int(rng.integers(5, 81))
            graph, _ = random_digraph(n, 3.0, instance, dead_end_fraction=0.3).to_graph(n)
            raw, _ = cpi_raw(graph, int(rng.integers(0, n)), config)

            rescaled = dead_end_rescale(raw)
            order = np.argsort(raw.values, kind="stable")
            assert np.all(np.diff(rescaled.values[order]) >= 0.0)
            assert rescaled.l1 == pytest.approx(1.0)
