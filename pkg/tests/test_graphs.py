import numpy as np
import pytest

from dicer.datasets import make_planted_blocks
from dicer.graphs import (AdjacencyGraph, build_bipartite_index, build_collab_graph, build_graphs,
                          cap_neighbors, collab_similarity, load_graphs, save_graphs)
from dicer.ingest import split_dataset


def brute_force_collab(grid, eta):
    """All pairs (a, b), a != b, with |H(a) & H(b)| / sqrt(|H(a)| |H(b)|) > eta."""
    hist = [set(np.flatnonzero(row).tolist()) for row in grid]
    edges = set()
    for a in range(len(hist)):
        for b in range(len(hist)):
            if a == b or not hist[a] or not hist[b]:
                continue
            sim = len(hist[a] & hist[b]) / np.sqrt(len(hist[a]) * len(hist[b]))
            if sim > eta:
                edges.add((a, b))
    return edges


def edge_set(graph):
    src, dst = graph.edges()
    return set(zip(src.tolist(), dst.tolist()))


def test_bipartite_inversion_example():
    idx = build_bipartite_index(np.array([[0, 1], [0, 2], [1, 2]]), 2, 3)
    assert idx.items_of_user.neighbors(0).tolist() == [1, 2]
    assert idx.users_of_item.neighbors(2).tolist() == [0, 1]


def test_bipartite_empty():
    idx = build_bipartite_index(np.zeros((0, 2), dtype=int), 3, 4)
    assert idx.items_of_user.num_edges == 0 and idx.users_of_item.num_edges == 0


def test_bipartite_inversion_exhaustive():
    grid = np.random.default_rng(0).random((50, 80)) < 0.1
    idx = build_bipartite_index(np.argwhere(grid), 50, 80)
    for u in range(50):
        for i in range(80):
            in_u = i in set(idx.items_of_user.neighbors(u).tolist())
            in_i = u in set(idx.users_of_item.neighbors(i).tolist())
            assert in_u == in_i == bool(grid[u, i])


def test_similarity_examples():
    train = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (1, 4), (1, 5), (2, 1), (2, 2), (2, 3), (3, 7)]
    idx = build_bipartite_index(np.array(train), 5, 8)
    assert collab_similarity(0, 1, idx) == pytest.approx(2 / np.sqrt(12), abs=1e-15)
    assert collab_similarity(0, 2, idx) == 1.0
    assert collab_similarity(0, 3, idx) == 0.0
    assert collab_similarity(0, 4, idx) == 0.0  # user 4 has no history


def test_threshold_is_strict():
    idx = build_bipartite_index(np.array([[0, 0], [1, 1], [2, 0], [2, 2]]), 3, 3)
    assert build_collab_graph(idx, "user", eta=0.1).num_edges == 2  # only 0 <-> 2
    assert (0, 1) not in edge_set(build_collab_graph(idx, "user", eta=0.0))
    # sim(0, 2) = 1/sqrt(2); equal to eta means no edge
    assert build_collab_graph(idx, "user", eta=1 / np.sqrt(2)).num_edges == 0


@pytest.mark.parametrize("eta", [0.0, 0.1, 0.25])
def test_collab_equals_brute_force(eta):
    grid = np.random.default_rng(42).random((50, 80)) < 0.08
    idx = build_bipartite_index(np.argwhere(grid), 50, 80)
    assert edge_set(build_collab_graph(idx, "user", eta)) == brute_force_collab(grid, eta)
    assert edge_set(build_collab_graph(idx, "item", eta)) == brute_force_collab(grid.T, eta)


def test_collab_graph_symmetric_no_loops():
    grid = np.random.default_rng(3).random((40, 30)) < 0.2
    g = build_collab_graph(build_bipartite_index(np.argwhere(grid), 40, 30), "item", 0.1)
    assert g.is_symmetric() and not g.has_self_loops()


def test_cap_neighbors():
    small = AdjacencyGraph.from_lists([[1, 2, 3, 4, 5]] + [[]] * 5)
    assert cap_neighbors(small, 30).to_lists() == small.to_lists()
    big = AdjacencyGraph.from_lists([list(range(1, 101))] + [[0]] * 100)
    capped = cap_neighbors(big, 30, seed=4)
    assert capped.degrees()[0] == 30
    assert set(capped.neighbors(0).tolist()) <= set(range(1, 101))
    assert capped.to_lists() == cap_neighbors(big, 30, seed=4).to_lists()
    assert capped.to_lists() != cap_neighbors(big, 30, seed=5).to_lists()


def test_graphs_are_train_only():
    data, social, _, _ = make_planted_blocks(n_users=60, n_items=60, seed=1)
    split = split_dataset(data, 1)
    g = build_graphs(split.train, 60, 60, social.src, social.dst, seed=1)
    train = set(map(tuple, split.train.tolist()))
    src, dst = g.index.items_of_user.edges()
    assert set(zip(src.tolist(), dst.tolist())) == train
    held_out = np.concatenate([split.validation, split.test])
    g2 = build_graphs(np.concatenate([split.train, held_out]), 60, 60, social.src, social.dst, seed=1)
    assert edge_set(g2.index.items_of_user) != edge_set(g.index.items_of_user)
    # collab graph equals the one rebuilt from train pairs alone
    rebuilt = build_collab_graph(build_bipartite_index(split.train, 60, 60), "user", 0.1)
    assert edge_set(cap_neighbors(rebuilt, 30, _seed(1, 1))) == edge_set(g.user_collab)


def _seed(seed, k):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(5)][k]


def test_capped_graph_is_subset_of_symmetric():
    data, social, _, _ = make_planted_blocks(seed=0)
    split = split_dataset(data, 0)
    g = build_graphs(split.train, 200, 200, social.src, social.dst, neighbor_cap=10, seed=0)
    full = build_collab_graph(g.index, "user", 0.1)
    assert full.is_symmetric()
    assert edge_set(g.user_collab) <= edge_set(full)
    assert g.user_collab.degrees().max() <= 10
    assert g.history.items_of_user.degrees().max() <= 50


def test_graph_persistence_round_trip(tmp_path):
    data, social, _, _ = make_planted_blocks(n_users=40, n_items=40, seed=2)
    split = split_dataset(data, 2)
    g = build_graphs(split.train, 40, 40, social.src, social.dst, neighbor_cap=5, history_cap=4, seed=2)
    save_graphs(tmp_path, g)
    back = load_graphs(tmp_path, split.train, 40, 40)
    for attr in ("social", "user_collab", "item_collab"):
        assert getattr(back, attr).to_lists() == getattr(g, attr).to_lists()
    assert back.history.items_of_user.to_lists() == g.history.items_of_user.to_lists()
    assert back.history.users_of_item.to_lists() == g.history.users_of_item.to_lists()
