from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnflow.graphs import (DIFFUSION, WALK, FeedforwardGraph, HeadSystem,
                             TransitionMatrix, combine_heads,
                             diffusion_matrix, example_one, example_two,
                             feedforward_graph, random_feedforward_graph,
                             stationary_residual, verify_sink_stationarity,
                             walk_matrix, walk_matrix_fractions)
from attnflow.numerics import ContractViolation, one_hot


def chain_graph(n):
    """1 -> 2 -> ... -> n with a self-loop only at the sink."""
    return feedforward_graph(n, [(j, j + 1) for j in range(1, n)],
                             self_loops=False)


def sink_mass(n):
    return one_hot(n - 1, n)


def graphs_for_sweep(count, rng, n_max=12):
    for i in range(count):
        n = int(rng.integers(2, n_max + 1))
        q = 0.2 if i % 2 == 0 else 0.5
        yield random_feedforward_graph(n, q, rng)


class TestFeedforwardGraph:
    def test_rejects_backward_edge(self):
        with pytest.raises(ContractViolation):
            feedforward_graph(3, [(2, 1)])

    def test_sink_self_loop_forced(self):
        g = feedforward_graph(3, [(1, 2), (2, 3)], self_loops=False)
        assert (3, 3) in g.edges

    def test_self_loops_default_on(self):
        g = feedforward_graph(4, [(1, 2)])
        assert g.has_all_self_loops()

    def test_rejects_stranded_vertex(self):
        # vertex 1 has no outgoing edge at all
        with pytest.raises(ContractViolation):
            FeedforwardGraph(3, frozenset([(2, 3), (3, 3)]))

    def test_json_round_trip(self):
        g = feedforward_graph(5, [(1, 3), (2, 5)])
        assert FeedforwardGraph.from_json(g.to_json()) == g

    def test_degrees(self):
        g = feedforward_graph(3, [(1, 2), (1, 3)])
        assert list(g.out_degrees()) == [3, 1, 1]
        assert list(g.in_degrees()) == [1, 2, 2]


class TestWalkMatrix:
    def test_two_node_with_self_loops(self):
        g = feedforward_graph(2, [(1, 2)])
        w = walk_matrix(g).matrix
        np.testing.assert_array_equal(w[:, 0], [0.5, 0.5])
        np.testing.assert_array_equal(w[:, 1], [0.0, 1.0])

    def test_pure_chain_deterministic_advance(self):
        w = walk_matrix(chain_graph(5)).matrix
        for j in range(4):
            assert w[j + 1, j] == 1.0

    def test_sink_mass_is_stationary_on_random_graphs(self):
        rng = np.random.default_rng(5)
        for g in graphs_for_sweep(100, rng):
            w = walk_matrix(g)
            np.testing.assert_allclose(w.matrix @ sink_mass(g.n),
                                       sink_mass(g.n), atol=1e-15)

    def test_columns_sum_exactly_one_in_rationals(self):
        rng = np.random.default_rng(6)
        for g in graphs_for_sweep(20, rng):
            exact = walk_matrix_fractions(g)
            for j in range(g.n):
                assert sum(row[j] for row in exact) == Fraction(1)

    def test_float_columns_sum_within_tolerance(self):
        rng = np.random.default_rng(7)
        for g in graphs_for_sweep(50, rng):
            sums = walk_matrix(g).matrix.sum(axis=0)
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)


class TestDiffusionMatrix:
    def test_three_node_bridge_heads(self):
        d1 = diffusion_matrix(feedforward_graph(3, [(1, 2)])).matrix
        d2 = diffusion_matrix(feedforward_graph(3, [(2, 3)])).matrix
        np.testing.assert_array_equal(
            d1, [[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1]])
        np.testing.assert_array_equal(
            d2, [[1, 0, 0], [0, 1, 0], [0, 0.5, 0.5]])

    def test_self_loops_only_gives_identity(self):
        g = feedforward_graph(4, [])
        np.testing.assert_array_equal(diffusion_matrix(g).matrix, np.eye(4))

    def test_requires_positive_in_degree(self):
        with pytest.raises(ContractViolation):
            diffusion_matrix(chain_graph(3))

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        for g in graphs_for_sweep(50, rng):
            sums = diffusion_matrix(g).matrix.sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_walk_and_diffusion_share_support(self):
        rng = np.random.default_rng(9)
        for g in graphs_for_sweep(50, rng):
            w = walk_matrix(g).matrix
            d = diffusion_matrix(g).matrix
            np.testing.assert_array_equal(w > 0, d > 0)


class TestTransitionMatrixInvariants:
    def test_walk_requires_column_sums(self):
        with pytest.raises(ContractViolation):
            TransitionMatrix(np.array([[0.5, 0.0], [0.4, 1.0]]), WALK)

    def test_diffusion_requires_row_sums(self):
        with pytest.raises(ContractViolation):
            TransitionMatrix(np.array([[0.5, 0.4], [0.0, 1.0]]), DIFFUSION)

    def test_rejects_negative_entries(self):
        with pytest.raises(ContractViolation):
            TransitionMatrix(np.array([[1.5, 0.0], [-0.5, 1.0]]), WALK)

    def test_matrix_frozen(self):
        t = walk_matrix(feedforward_graph(3, [(1, 2)]))
        with pytest.raises(ValueError):
            t.matrix[0, 0] = 0.9

    def test_causal_flag(self):
        assert walk_matrix(chain_graph(4)).is_causal()
        assert not example_two().heads[1].is_causal()


class TestStationaryResidual:
    def test_sink_mass_residual_zero(self):
        rng = np.random.default_rng(10)
        for g in graphs_for_sweep(30, rng):
            w = walk_matrix(g)
            assert stationary_residual(w, sink_mass(g.n)) <= 1e-12

    def test_chain_start_mass_leaks_forward(self):
        w = walk_matrix(chain_graph(3))
        # W e1 = e2, so the L1 residual is |e2 - e1|_1 = 2
        assert stationary_residual(w, one_hot(0, 3)) == 2.0

    def test_combined_diffusion_column_normalized_absorbs_at_sink(self):
        # the 4-node combined operator, column-normalized into a walk,
        # leaves the sink point mass fixed
        combined = combine_heads(example_two()).matrix
        w = TransitionMatrix(combined / combined.sum(axis=0), WALK)
        assert stationary_residual(w, sink_mass(4)) <= 1e-12

    def test_orientation_checked(self):
        with pytest.raises(ContractViolation):
            stationary_residual(example_one().heads[0], one_hot(2, 3))


class TestVerifySinkStationarity:
    def test_pure_chain_worst_start_time(self):
        report = verify_sink_stationarity(walk_matrix(chain_graph(5)),
                                          t_max=64, tol=1e-9)
        assert report.converged
        assert report.worst_start == 1
        assert report.worst_steps == 4
        assert report.steps_to_converge[4] == 0

    def test_random_graphs_converge(self):
        rng = np.random.default_rng(11)
        for g in graphs_for_sweep(60, rng):
            assert verify_sink_stationarity(walk_matrix(g),
                                            t_max=4096).converged

    def test_convex_combination_converges(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(2, 10))
            heads = tuple(walk_matrix(random_feedforward_graph(n, 0.5, rng))
                          for _ in range(3))
            combined = combine_heads(HeadSystem(heads, rng.dirichlet([1] * 3)))
            assert verify_sink_stationarity(combined, t_max=4096).converged

    def test_non_convergence_reported_not_raised(self):
        # two disconnected absorbing states: mass at vertex 1 never moves
        m = np.eye(3)
        report = verify_sink_stationarity(TransitionMatrix(m, WALK), t_max=16)
        assert not report.converged
        assert report.steps_to_converge[0] == -1


class TestCombineHeads:
    def test_four_node_printed_combination(self):
        combined = combine_heads(example_two()).matrix
        expected = np.array([[0.75, 0.25, 0, 0],
                             [0.25, 0.75, 0, 0],
                             [0.25, 0.25, 0.5, 0],
                             [0, 0, 0.5, 0.5]])
        np.testing.assert_array_equal(combined, expected)

    def test_single_head_identity_of_operation(self):
        head = walk_matrix(feedforward_graph(3, [(1, 3)]))
        combined = combine_heads(HeadSystem((head,), np.array([1.0])))
        np.testing.assert_array_equal(combined.matrix, head.matrix)

    def test_identical_heads_any_weights(self):
        head = walk_matrix(feedforward_graph(4, [(1, 2), (2, 4)]))
        combined = combine_heads(HeadSystem((head, head),
                                            np.array([0.3, 0.7])))
        np.testing.assert_allclose(combined.matrix, head.matrix, atol=1e-15)

    def test_weight_sum_violation(self):
        head = walk_matrix(feedforward_graph(2, [(1, 2)]))
        with pytest.raises(ContractViolation):
            HeadSystem((head, head), np.array([0.6, 0.6]))


class TestExampleSystems:
    def test_example_one_valid_head_system(self):
        system = example_one()
        assert system.orientation == DIFFUSION
        assert system.n == 3

    def test_example_two_valid_head_system(self):
        system = example_two()
        assert system.orientation == DIFFUSION
        assert system.n == 4
        for head in system.heads:
            np.testing.assert_allclose(head.matrix.sum(axis=1), 1.0,
                                       atol=1e-12)

    def test_example_one_custom_weights(self):
        system = example_one(beta=(0.2, 0.8))
        np.testing.assert_array_equal(system.weights, [0.2, 0.8])


class TestSinkConvergenceProperty:
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_worst_start_tv_non_increasing_past_n(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 10))
        w = walk_matrix(random_feedforward_graph(n, 0.5, rng)).matrix
        target = sink_mass(n)[:, None]
        powers = np.linalg.matrix_power(w, n)
        worst = [0.5 * np.abs(powers - target).sum(axis=0).max()]
        for _ in range(3 * n):
            powers = w @ powers
            worst.append(0.5 * np.abs(powers - target).sum(axis=0).max())
        diffs = np.diff(worst)
        assert np.all(diffs <= 1e-12)
