import itertools

import numpy as np
import pytest

from flowtracker_lab.errors import CapabilityError, InvalidInputError
from flowtracker_lab.graphnet import (
    DirectedGraph,
    Laplacian,
    LaplacianProcess,
    common_stationary_distribution,
    constant_process,
    cut_value,
    graph_from_edges,
    integrated_min_cut,
    is_weight_balanced,
    make_laplacian,
    min_cut,
    process_from_dict,
    process_to_dict,
    random_process,
)

TWO_NODE = np.array([[1.0, -1.0], [-1.0, 1.0]])


def three_cycle_weights(values=(1.0, 1.0, 1.0)):
    # edges (0,1), (1,2), (2,0): each agent reads its successor
    w = np.zeros((3, 3))
    w[0, 1], w[1, 2], w[2, 0] = values
    return w


def naive_cut(a: np.ndarray, subset) -> float:
    """Independent weighted-cut oracle: total weight leaving the subset."""
    n = a.shape[0]
    return sum(a[i, j] for i in subset for j in range(n) if j not in subset)


def naive_min_cut(a: np.ndarray) -> float:
    n = a.shape[0]
    best = np.inf
    for r in range(1, n):
        for subset in itertools.combinations(range(n), r):
            best = min(best, naive_cut(a, subset))
    return best


def reachable(adj: np.ndarray, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return seen


def strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    return all(len(reachable(adj, i)) == n for i in range(n))


class TestMakeLaplacian:
    def test_two_node_complete(self):
        lap = make_laplacian([[0, 1], [1, 0]])
        assert np.array_equal(lap.matrix, TWO_NODE)

    def test_all_zero_weights(self):
        lap = make_laplacian(np.zeros((3, 3)))
        assert np.array_equal(lap.matrix, np.zeros((3, 3)))

    def test_directed_three_cycle(self):
        lap = make_laplacian(three_cycle_weights())
        assert np.allclose(np.diagonal(lap.matrix), 1.0)
        for j in range(3):
            col = lap.matrix[:, j]
            assert np.count_nonzero(col == -1.0) == 1

    def test_columns_sum_to_zero_random(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(2, 8))
            w = rng.uniform(0, 2, (n, n))
            np.fill_diagonal(w, 0.0)
            lap = make_laplacian(w)
            assert np.abs(lap.matrix.sum(axis=0)).max() < 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(InvalidInputError):
            make_laplacian([[0, -1], [1, 0]])

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(InvalidInputError):
            make_laplacian([[1, 1], [1, 0]])

    def test_positive_offdiagonal_rejected_in_validator(self):
        with pytest.raises(InvalidInputError):
            Laplacian(np.array([[1.0, 1.0], [-1.0, -1.0]]))


class TestWeightBalance:
    def test_symmetric_is_balanced(self):
        assert is_weight_balanced(Laplacian(TWO_NODE))

    def test_unit_cycle_is_balanced(self):
        lap = make_laplacian(three_cycle_weights())
        # hand oracle: row sums
        assert all(abs(sum(lap.matrix[i])) < 1e-12 for i in range(3))
        assert is_weight_balanced(lap)

    def test_unbalanced_example(self):
        lap = Laplacian(np.array([[1.0, -2.0], [-1.0, 2.0]]))
        assert sum(lap.matrix[0]) == -1.0
        assert not is_weight_balanced(lap)

    def test_nonuniform_cycle_not_balanced(self):
        lap = make_laplacian(three_cycle_weights((1.0, 2.0, 3.0)))
        assert not is_weight_balanced(lap)


class TestCutValue:
    def test_single_offdiagonal_entry(self):
        assert cut_value(Laplacian(TWO_NODE), {0}, {1}) == -1.0

    def test_diagonal_entry(self):
        assert cut_value(Laplacian(TWO_NODE), {0}, {0}) == 1.0

    def test_three_cycle_block(self):
        lap = make_laplacian(three_cycle_weights())
        # entry enumeration oracle
        expected = sum(lap.matrix[i, j] for i in (0, 1) for j in (2,))
        assert cut_value(lap, {0, 1}, {2}) == expected == -1.0

    def test_empty_s1_rejected(self):
        with pytest.raises(InvalidInputError):
            cut_value(Laplacian(TWO_NODE), set(), {0})

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidInputError):
            cut_value(Laplacian(TWO_NODE), {0}, {5})

    def test_additive_over_disjoint_s2(self):
        rng = np.random.default_rng(11)
        w = rng.uniform(0, 1, (5, 5))
        np.fill_diagonal(w, 0.0)
        lap = make_laplacian(w)
        s1 = {0, 2}
        a, b = {1, 3}, {4}
        assert cut_value(lap, s1, a | b) == pytest.approx(
            cut_value(lap, s1, a) + cut_value(lap, s1, b), abs=1e-12
        )

    def test_complement_cut_is_negated_weight_cut(self):
        rng = np.random.default_rng(4)
        w = rng.uniform(0, 1, (4, 4))
        np.fill_diagonal(w, 0.0)
        lap = make_laplacian(w)
        a = lap.weight_matrix()
        for r in range(1, 4):
            for subset in itertools.combinations(range(4), r):
                comp = set(range(4)) - set(subset)
                cv = cut_value(lap, set(subset), comp)
                assert cv <= 1e-12
                assert cv == pytest.approx(-naive_cut(a, subset), abs=1e-12)


class TestMinCut:
    def test_two_node_complete(self):
        lap = Laplacian(TWO_NODE)
        assert min_cut(lap) == pytest.approx(naive_min_cut(lap.weight_matrix())) == 1.0

    def test_zero_laplacian(self):
        assert min_cut(Laplacian(np.zeros((4, 4)))) == 0.0

    def test_three_cycle_unit(self):
        lap = make_laplacian(three_cycle_weights())
        assert min_cut(lap) == pytest.approx(1.0)
        assert naive_min_cut(lap.weight_matrix()) == pytest.approx(1.0)

    def test_matches_naive_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            w = rng.uniform(0, 1, (n, n)) * (rng.random((n, n)) < 0.6)
            np.fill_diagonal(w, 0.0)
            lap = make_laplacian(w)
            assert min_cut(lap) == pytest.approx(naive_min_cut(w), abs=1e-12)

    def test_disconnected_graph_has_zero_cut(self):
        w = np.zeros((4, 4))
        w[0, 1] = w[1, 0] = 1.0
        w[2, 3] = w[3, 2] = 1.0
        assert min_cut(make_laplacian(w)) == 0.0

    def test_strongly_connected_positive(self):
        rng = np.random.default_rng(9)
        w = rng.uniform(0.5, 1.5, (5, 5))
        np.fill_diagonal(w, 0.0)
        assert min_cut(make_laplacian(w)) > 0

    def test_size_cap(self):
        w = np.zeros((25, 25))
        with pytest.raises(CapabilityError):
            min_cut(make_laplacian(w))


class TestIntegratedMinCut:
    def test_constant_complete_window(self):
        proc = constant_process(Laplacian(TWO_NODE), horizon=4.0)
        assert integrated_min_cut(proc, 0.0, 2.0) == pytest.approx(2.0)

    def test_alternating_empty_complete(self):
        zero = Laplacian(np.zeros((2, 2)))
        comp = Laplacian(TWO_NODE)
        proc = LaplacianProcess((0.0, 1.0, 2.0, 3.0), (zero, comp, zero, comp), 4.0)
        assert integrated_min_cut(proc, 0.0, 2.0) == pytest.approx(1.0)
        assert integrated_min_cut(proc, 1.0, 2.0) == pytest.approx(1.0)

    def test_zero_window(self):
        proc = constant_process(Laplacian(TWO_NODE), horizon=1.0)
        assert integrated_min_cut(proc, 0.5, 0.0) == 0.0

    def test_window_beyond_horizon_rejected(self):
        proc = constant_process(Laplacian(TWO_NODE), horizon=1.0)
        with pytest.raises(InvalidInputError):
            integrated_min_cut(proc, 0.5, 1.0)


class TestStationaryDistribution:
    def test_weight_balanced_gives_uniform(self):
        proc = random_process(4, "switching-complete", dwell=0.5, horizon=2.0, seed=1)
        assert proc.is_weight_balanced()
        pi = common_stationary_distribution(proc)
        assert pi is not None
        assert np.allclose(pi, 0.25, atol=1e-9)

    def test_two_node_directed(self):
        lap = Laplacian(np.array([[1.0, -2.0], [-1.0, 2.0]]))
        pi = common_stationary_distribution(constant_process(lap, 1.0))
        assert pi is not None
        assert np.allclose(pi, [2 / 3, 1 / 3], atol=1e-10)

    def test_disjoint_null_spaces_give_none(self):
        # pi must be proportional to (2,1) for the first piece and (1,2)
        # for the second; no common positive direction exists.
        a = Laplacian(np.array([[1.0, -2.0], [-1.0, 2.0]]))
        b = Laplacian(np.array([[2.0, -1.0], [-2.0, 1.0]]))
        proc = LaplacianProcess((0.0, 1.0), (a, b), 2.0)
        assert common_stationary_distribution(proc) is None

    def test_multi_piece_shared_distribution(self):
        # two distinct cycles reweighted to share pi = (0.5, 0.3, 0.2)
        pi = np.array([0.5, 0.3, 0.2])
        cyc1 = [(0, 1), (1, 2), (2, 0)]
        cyc2 = [(0, 2), (2, 1), (1, 0)]
        laps = []
        for cyc in (cyc1, cyc2):
            w = np.zeros((3, 3))
            for i, j in cyc:
                w[i, j] = 1.0 / pi[j]
            laps.append(make_laplacian(w))
        for lap in laps:
            assert np.abs(lap.matrix @ pi).max() < 1e-12
        proc = LaplacianProcess((0.0, 1.0), tuple(laps), 2.0)
        found = common_stationary_distribution(proc)
        assert found is not None
        assert np.allclose(found, pi, atol=1e-9)


class TestRandomProcess:
    def test_deterministic_for_fixed_seed(self):
        a = random_process(2, "switching-complete", dwell=0.5, horizon=2.0, seed=7)
        b = random_process(2, "switching-complete", dwell=0.5, horizon=2.0, seed=7)
        for la, lb in zip(a.laplacians, b.laplacians):
            assert np.array_equal(la.matrix, lb.matrix)

    def test_ring_rotate_edge_count(self):
        proc = random_process(3, "directed-ring-rotate", dwell=0.5, horizon=3.0, seed=0)
        for lap in proc.laplacians:
            assert np.count_nonzero(lap.weight_matrix()) == 3

    def test_ring_rotate_not_weight_balanced(self):
        proc = random_process(5, "directed-ring-rotate", dwell=0.5, horizon=5.0, seed=2)
        assert not proc.is_weight_balanced()

    def test_window_model_union_strongly_connected(self):
        b = 3
        proc = random_process(
            5, "B-window-strongly-connected", dwell=0.5, horizon=10.0, seed=5, B=b
        )
        laps = proc.laplacians
        for k in range(len(laps) - b + 1):
            union = sum(lap.weight_matrix() for lap in laps[k : k + b])
            assert strongly_connected(union > 0)

    def test_each_piece_valid(self):
        proc = random_process(4, "directed-ring-rotate", dwell=0.25, horizon=2.0, seed=3)
        for lap in proc.laplacians:
            assert np.abs(lap.matrix.sum(axis=0)).max() < 1e-12

    def test_misaligned_dwell_rejected(self):
        with pytest.raises(InvalidInputError):
            random_process(3, "switching-complete", dwell=0.0015, horizon=1.0, seed=0, h=1e-3)
        # 0.0015 / 1e-3 = 1.5 steps

    def test_unknown_model_rejected(self):
        with pytest.raises(InvalidInputError):
            random_process(3, "nope", dwell=0.5, horizon=1.0, seed=0)


class TestSerialization:
    def test_round_trip(self):
        proc = random_process(3, "directed-ring-rotate", dwell=0.5, horizon=2.0, seed=12)
        data = process_to_dict(proc)
        back = process_from_dict(data)
        assert back.start_times == proc.start_times
        assert back.horizon == proc.horizon
        for la, lb in zip(proc.laplacians, back.laplacians):
            assert np.array_equal(la.matrix, lb.matrix)

    def test_weights_are_the_disk_format(self):
        proc = constant_process(Laplacian(TWO_NODE), 1.0)
        data = process_to_dict(proc)
        assert data["pieces"][0]["weights"] == [[0.0, 1.0], [1.0, 0.0]]

    def test_malformed_rejected(self):
        with pytest.raises(InvalidInputError):
            process_from_dict({"n": 2, "pieces": [], "horizon": 1.0})


class TestDirectedGraph:
    def test_edges_and_laplacian(self):
        g = graph_from_edges(3, {(0, 1): 1.0, (1, 2): 2.0})
        assert g.edges == ((0, 1), (1, 2))
        lap = g.laplacian()
        assert lap.matrix[0, 1] == -1.0
        assert lap.matrix[2, 2] == 2.0

    def test_self_loop_rejected(self):
        with pytest.raises(InvalidInputError):
            graph_from_edges(2, {(0, 0): 1.0})

    def test_negative_weight_rejected(self):
        with pytest.raises(InvalidInputError):
            DirectedGraph(2, np.array([[0.0, -1.0], [0.0, 0.0]]))
