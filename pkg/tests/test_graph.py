import numpy as np
import pytest

from maskcast import autodiff as ad
from maskcast.autodiff import ParameterTree, Tensor, finite_diff_check
from maskcast.graph import (Graph, WalkConfig, adaptive_adjacency,
                            biased_random_walk, gaussian_threshold_graph,
                            load_edge_list, normalize_adjacency, save_edge_list,
                            sparsify_topk)

from conftest import random_graph


class TestGaussianThreshold:
    def test_zero_distance_gives_unit_weight(self):
        d = np.array([[0.0, 0.0], [0.0, 0.0]])
        g = gaussian_threshold_graph(d, sigma=1.0, epsilon=0.9)
        assert g.adjacency[0, 1] == 1.0

    def test_three_node_threshold_example(self):
        d = np.array([[0, 1, 3], [1, 0, 1], [3, 1, 0]], dtype=float)
        g = gaussian_threshold_graph(d, sigma=1.0, epsilon=0.5)
        assert g.n_edges == 0  # exp(-1) ~ 0.368 < 0.5

        g = gaussian_threshold_graph(d, sigma=1.0, epsilon=0.3)
        assert g.edge_set() == {(0, 1), (1, 2)}  # exp(-9) ~ 1.2e-4 drops (0, 2)
        np.testing.assert_allclose(g.adjacency[0, 1], np.exp(-1.0))

    def test_zero_epsilon_gives_complete_graph(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(size=(5, 2))
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        g = gaussian_threshold_graph(d, sigma=1.0, epsilon=0.0)
        assert g.n_edges == 5 * 4 // 2

    def test_asymmetric_rejected(self):
        d = np.array([[0, 1], [2, 0]], dtype=float)
        with pytest.raises(ValueError, match="symmetric"):
            gaussian_threshold_graph(d, sigma=1.0)

    def test_negative_rejected(self):
        d = np.array([[0, -1], [-1, 0]], dtype=float)
        with pytest.raises(ValueError, match="nonnegative"):
            gaussian_threshold_graph(d, sigma=1.0)

    def test_default_sigma_is_offdiag_std(self):
        d = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
        g = gaussian_threshold_graph(d, epsilon=0.0)
        sigma = d[~np.eye(3, dtype=bool)].std()
        np.testing.assert_allclose(g.adjacency[0, 1], np.exp(-1.0 / sigma ** 2))


class TestNormalizeAdjacency:
    def test_edgeless_graph_is_identity(self):
        g = Graph(n_nodes=2, edges=[])
        np.testing.assert_array_equal(normalize_adjacency(g), np.eye(2))

    def test_two_node_single_edge(self):
        g = Graph(n_nodes=2, edges=[(0, 1, 1.0)])
        np.testing.assert_allclose(normalize_adjacency(g), [[0.5, 0.5], [0.5, 0.5]])

    def test_row_sums_one(self):
        g = random_graph(15, 30, seed=1)
        rows = normalize_adjacency(g).sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)


class TestAdaptiveAdjacency:
    def test_zero_embeddings_uniform(self):
        a = adaptive_adjacency(np.zeros((4, 3)))
        np.testing.assert_allclose(a.data, 0.25)

    def test_two_node_hand_example(self):
        a = adaptive_adjacency(np.array([[1.0], [-1.0]]))
        e = np.e
        expected = [[e / (e + 1), 1 / (e + 1)], [1 / (e + 1), e / (e + 1)]]
        np.testing.assert_allclose(a.data, expected, rtol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        a = adaptive_adjacency(rng.normal(size=(7, 4)))
        np.testing.assert_allclose(a.data.sum(axis=1), 1.0, atol=1e-12)

    def test_differentiable(self):
        rng = np.random.default_rng(2)
        params = ParameterTree()
        emb = params.add("emb", rng.normal(size=(4, 3)))
        weight = Tensor(rng.uniform(0.5, 1.5, size=(4, 4)))

        def f():
            return ad.tsum(ad.mul(adaptive_adjacency(emb), weight))

        assert finite_diff_check(f, params) < 1e-4


class TestSparsifyTopk:
    def test_k_equals_n_minus_one_keeps_all(self):
        rng = np.random.default_rng(0)
        dense = rng.uniform(0.1, 1.0, size=(4, 4))
        g = sparsify_topk(dense, 3)
        assert g.n_edges == 6

    def test_row_argmax_kept(self):
        dense = np.array([[0.0, 0.5, 0.9],
                          [0.0, 0.0, 0.0],
                          [0.0, 0.0, 0.0]])
        g = sparsify_topk(dense, 1)
        assert g.edge_set() == {(0, 2)}
        assert g.adjacency[0, 2] == 0.9

    def test_symmetrize_by_max_restores_one_sided_keep(self):
        # (0, 1) survives via row 0 even though row 1 prefers (1, 2)
        dense = np.array([[0.0, 0.9, 0.1],
                          [0.9, 0.0, 0.95],
                          [0.1, 0.95, 0.0]])
        g = sparsify_topk(dense, 1)
        assert (0, 1) in g.edge_set()
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)

    def test_result_symmetric(self):
        rng = np.random.default_rng(3)
        g = sparsify_topk(rng.uniform(size=(8, 8)), 2)
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)

    def test_k_too_large_rejected(self):
        with pytest.raises(ValueError, match="k must be"):
            sparsify_topk(np.ones((3, 3)), 3)


class TestBiasedRandomWalk:
    def test_unbiased_cycle_uniform(self, cycle_graph):
        # p = q = 1: the two neighbors are equally likely at every step
        cfg = WalkConfig(p=1.0, q=1.0, walk_length=3)
        rng = np.random.default_rng(0)
        counts = {1: 0, 3: 0}
        n = 100_000
        for _ in range(n):
            path = biased_random_walk(cycle_graph, 0, cfg, rng)
            counts[path[1]] += 1
        assert abs(counts[1] / n - 0.5) < 0.01

    def test_path_graph_transition_bias(self, path_graph):
        # at b having arrived from a: weights {a: 1/p = 2, c: 1/q = 0.5}
        cfg = WalkConfig(p=0.5, q=2.0, walk_length=3)
        rng = np.random.default_rng(1)
        back = 0
        n = 100_000
        for _ in range(n):
            path = biased_random_walk(path_graph, 0, cfg, rng)
            # first step is forced a -> b; third node reveals the biased choice
            if path[2] == 0:
                back += 1
        assert abs(back / n - 0.8) < 0.01

    def test_walk_edges_exist(self):
        g = random_graph(10, 18, seed=4)
        cfg = WalkConfig(walk_length=8)
        rng = np.random.default_rng(0)
        edge_set = g.edge_set()
        for root in range(g.n_nodes):
            if not g.adjacency[root].any():
                continue
            path = biased_random_walk(g, root, cfg, rng)
            for a, b in zip(path, path[1:]):
                assert (min(a, b), max(a, b)) in edge_set

    def test_seeded_walk_reproducible(self, cycle_graph):
        cfg = WalkConfig(p=0.7, q=1.3, walk_length=10)
        one = biased_random_walk(cycle_graph, 0, cfg, np.random.default_rng(9))
        two = biased_random_walk(cycle_graph, 0, cfg, np.random.default_rng(9))
        assert one == two

    def test_isolated_root_rejected(self):
        g = Graph(n_nodes=3, edges=[(0, 1, 1.0)])
        with pytest.raises(ValueError, match="no neighbors"):
            biased_random_walk(g, 2, WalkConfig(), np.random.default_rng(0))

    def test_invalid_walk_config(self):
        with pytest.raises(ValueError):
            WalkConfig(p=0.0)
        with pytest.raises(ValueError):
            WalkConfig(walk_length=1)


class TestEdgeListIO:
    def test_round_trip(self, tmp_path):
        g = random_graph(6, 9, seed=2)
        path = tmp_path / "edges.csv"
        save_edge_list(g, path)
        loaded = load_edge_list(path, n_nodes=6)
        assert loaded.edge_set() == g.edge_set()
        np.testing.assert_array_equal(loaded.adjacency, g.adjacency)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("a,b,c\n0,1,1.0\n")
        with pytest.raises(ValueError, match="header"):
            load_edge_list(path, n_nodes=2)
