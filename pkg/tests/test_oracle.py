import itertools

import numpy as np
import pytest

from graphsync.graphgen import Graph, Instance, make_synthetic
from graphsync.matcore import SinkhornParams, discretize, sinkhorn
from graphsync.oracle import (
    brute_force_multi,
    brute_force_pair,
    matching_accuracy,
)
from graphsync.qapsolve import pair_kbqap_objective, pairwise_affinities, AffinityParams
from graphsync.universe import AssignmentStack, cycle_violations, expand_matchings


def random_graph(rng, nodes, feat_dim=3):
    adj = np.abs(rng.standard_normal((nodes, nodes)))
    np.fill_diagonal(adj, 0.0)
    return Graph(rng.standard_normal((nodes, feat_dim)), adj, np.ones(nodes, dtype=int))


class TestBruteForcePair:
    def test_dominant_diagonal_linear_term(self):
        aff = np.full((3, 3), 0.0)
        np.fill_diagonal(aff, 10.0)
        matching, value = brute_force_pair(np.zeros((3, 3)), np.zeros((3, 3)), aff, 0.0)
        assert np.array_equal(matching, np.eye(3))
        assert value == 30.0

    def test_two_node_swap(self):
        aff = np.array([[0.0, 1.0], [1.0, 0.0]])
        matching, value = brute_force_pair(np.zeros((2, 2)), np.zeros((2, 2)), aff, 0.0)
        assert value == 2.0
        assert np.array_equal(matching, np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_agrees_with_sinkhorn_rounding_on_dominant_affinity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            aff = rng.random((n, n)) + 10.0 * np.eye(n)[rng.permutation(n)]
            matching, _ = brute_force_pair(np.zeros((n, n)), np.zeros((n, n)), aff, 0.0)
            rounded = discretize(sinkhorn(aff, SinkhornParams(tau=0.01, max_iters=200)))
            assert np.array_equal(matching, rounded)

    def test_value_matches_objective_evaluator(self):
        rng = np.random.default_rng(2)
        adj_i = np.abs(rng.standard_normal((4, 4)))
        adj_j = np.abs(rng.standard_normal((4, 4)))
        aff = rng.standard_normal((4, 4))
        matching, value = brute_force_pair(adj_i, adj_j, aff, 1.5)
        assert value == pytest.approx(
            pair_kbqap_objective(matching, adj_i, adj_j, aff, 1.5), rel=1e-12
        )

    def test_optimal_over_sampled_feasible_matchings(self):
        rng = np.random.default_rng(3)
        adj_i = np.abs(rng.standard_normal((4, 4)))
        adj_j = np.abs(rng.standard_normal((5, 5)))
        aff = rng.standard_normal((4, 5))
        _, best = brute_force_pair(adj_i, adj_j, aff, 0.7)
        for _ in range(100):
            k = int(rng.integers(0, 5))
            rows = rng.permutation(4)[:k]
            cols = rng.permutation(5)[:k]
            candidate = np.zeros((4, 5))
            candidate[rows, cols] = 1.0
            value = pair_kbqap_objective(candidate, adj_i, adj_j, aff, 0.7)
            assert value <= best + 1e-9

    def test_rectangular_shapes(self):
        rng = np.random.default_rng(4)
        for n_i, n_j in ((2, 5), (5, 2)):
            adj_i = np.abs(rng.standard_normal((n_i, n_i)))
            adj_j = np.abs(rng.standard_normal((n_j, n_j)))
            aff = rng.standard_normal((n_i, n_j))
            matching, value = brute_force_pair(adj_i, adj_j, aff, 1.0)
            assert matching.sum() == min(n_i, n_j)
            assert matching.sum(axis=0).max() <= 1.0
            assert matching.sum(axis=1).max() <= 1.0
            assert value == pytest.approx(
                pair_kbqap_objective(matching, adj_i, adj_j, aff, 1.0)
            )

    def test_size_bound(self):
        with pytest.raises(ValueError):
            brute_force_pair(np.zeros((9, 9)), np.zeros((9, 9)), np.zeros((9, 9)), 1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        adj_i = np.abs(rng.standard_normal((3, 3)))
        adj_j = np.abs(rng.standard_normal((3, 3)))
        aff = rng.standard_normal((3, 3))
        first = brute_force_pair(adj_i, adj_j, aff, 1.0)
        second = brute_force_pair(adj_i, adj_j, aff, 1.0)
        assert np.array_equal(first[0], second[0])
        assert first[1] == second[1]


class TestBruteForceMulti:
    def test_two_graph_case_matches_pair_oracle(self):
        # With d = n_i + n_j every pairwise partial matching is realizable by
        # universe assignments, so the consistent optimum equals the
        # unconstrained pairwise optimum.
        rng = np.random.default_rng(6)
        graphs = [random_graph(rng, 3), random_graph(rng, 3)]
        inst = Instance(graphs, None, {})
        aff = rng.standard_normal((3, 3))
        affs = {(0, 1): aff, (1, 0): aff.T, (0, 0): np.eye(3), (1, 1): np.eye(3)}
        stack, value = brute_force_multi(inst, 1.0, 6, affs)
        _, pair_value = brute_force_pair(graphs[0].adjacency, graphs[1].adjacency, aff, 1.0)
        assert value == pytest.approx(pair_value, rel=1e-12)

    def test_identical_graphs_recover_ground_truth(self):
        rng = np.random.default_rng(7)
        inst = make_synthetic(3, 3, 4, 0.0, 0, 1, rng=rng)
        affs = pairwise_affinities(
            [g.features for g in inst.graphs], AffinityParams.identity(4)
        )
        stack, _ = brute_force_multi(inst, 0.0, 4, affs)
        assert matching_accuracy(stack, inst) == 1.0

    def test_all_zero_ties_break_to_first_enumeration(self):
        graphs = [
            Graph(np.ones((2, 2)), np.zeros((2, 2)), np.ones(2, dtype=int))
            for _ in range(3)
        ]
        inst = Instance(graphs, None, {})
        affs = {
            (i, j): np.zeros((2, 2)) for i in range(3) for j in range(3)
        }
        stack, value = brute_force_multi(inst, 1.0, 4, affs)
        assert value == 0.0
        expected = np.zeros((2, 4))
        expected[0, 0] = expected[1, 1] = 1.0
        for block in stack.blocks:
            assert np.array_equal(block, expected)

    def test_output_is_cycle_consistent(self):
        rng = np.random.default_rng(8)
        inst = make_synthetic(3, 3, 3, 0.3, 1, 2, rng=rng)
        stack, _ = brute_force_multi(inst, 1.0, 5)
        assert cycle_violations(expand_matchings(stack)) == 0

    def test_optimal_over_sampled_stacks(self):
        rng = np.random.default_rng(9)
        inst = make_synthetic(3, 3, 3, 0.2, 0, 1, rng=rng)
        affs = pairwise_affinities(
            [g.features for g in inst.graphs], AffinityParams.identity(3)
        )
        _, best = brute_force_multi(inst, 1.0, 5, affs)
        from graphsync.qapsolve import stack_objective

        for _ in range(200):
            blocks = []
            for g in inst.graphs:
                block = np.zeros((3, 5))
                block[np.arange(3), rng.permutation(5)[:3]] = 1.0
                blocks.append(block)
            stack = AssignmentStack(blocks, "binary")
            assert stack_objective(stack, inst.graphs, affs, 1.0) <= best + 1e-9

    def test_size_bounds(self):
        rng = np.random.default_rng(10)
        big = make_synthetic(4, 3, 3, 0.0, 0, 1, rng=rng)
        with pytest.raises(ValueError):
            brute_force_multi(big, 1.0, 5)
        wide = make_synthetic(3, 3, 3, 0.0, 0, 1, rng=rng)
        with pytest.raises(ValueError):
            brute_force_multi(wide, 1.0, 7)


class TestMatchingAccuracy:
    def test_ground_truth_matchings_score_one(self):
        rng = np.random.default_rng(11)
        inst = make_synthetic(3, 4, 3, 0.0, 0, 1, rng=rng)
        blocks = []
        for slots in inst.gt:
            block = np.zeros((4, 6))
            block[np.arange(4), slots] = 1.0
            blocks.append(block)
        assert matching_accuracy(AssignmentStack(blocks, "binary"), inst) == 1.0

    def test_empty_matchings_score_zero(self):
        rng = np.random.default_rng(12)
        inst = make_synthetic(3, 4, 3, 0.0, 0, 1, rng=rng)
        pred = {
            (i, j): np.zeros((4, 4))
            for i in range(3)
            for j in range(3)
            if i != j
        }
        assert matching_accuracy(pred, inst) == 0.0

    def test_half_correct(self):
        # Two graphs, four nodes, identity ground truth; the prediction gets
        # exactly two of the four node pairs right in each direction.
        graphs = [
            Graph(np.ones((4, 2)), np.zeros((4, 4)), np.ones(4, dtype=int))
            for _ in range(2)
        ]
        gt = [np.arange(4), np.arange(4)]
        inst = Instance(graphs, gt, {})
        pred_matrix = np.zeros((4, 4))
        pred_matrix[0, 0] = pred_matrix[1, 1] = 1.0
        pred_matrix[2, 3] = pred_matrix[3, 2] = 1.0
        pred = {(0, 1): pred_matrix, (1, 0): pred_matrix.T}
        assert matching_accuracy(pred, inst) == 0.5

    def test_outliers_excluded(self):
        rng = np.random.default_rng(13)
        inst = make_synthetic(2, 3, 3, 0.0, 2, 1, rng=rng)
        blocks = []
        for slots in inst.gt:
            block = np.zeros((5, 8))
            for node, slot in enumerate(slots):
                block[node, slot if slot >= 0 else 3 + node] = 1.0
            blocks.append(block)
        assert matching_accuracy(AssignmentStack(blocks, "binary"), inst) == 1.0

    def test_missing_gt_rejected(self):
        rng = np.random.default_rng(14)
        inst = make_synthetic(2, 3, 3, 0.0, 0, 1, rng=rng)
        inst = Instance(inst.graphs, None, {})
        with pytest.raises(ValueError):
            matching_accuracy({}, inst)
