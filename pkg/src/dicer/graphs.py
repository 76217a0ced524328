"""Neighbor structures: bipartite histories, social and collaborative-similarity graphs.

All graphs are stored in CSR form (``indptr``, ``indices``) with sorted
neighbor lists, which is what the vectorized propagation and modulation code
consumes. Everything here is built from training interactions only.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ingest import read_keyvalue, write_keyvalue

KINDS = ("social", "user-collab", "item-collab", "user-history", "item-history")


@dataclass
class AdjacencyGraph:
    indptr: np.ndarray
    indices: np.ndarray
    kind: str = "social"

    @classmethod
    def from_lists(cls, lists, kind="social"):
        lists = [np.asarray(sorted(x), dtype=np.int64) for x in lists]
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(x) for x in lists])
        indices = np.concatenate(lists) if lists and indptr[-1] else np.zeros(0, dtype=np.int64)
        return cls(indptr, indices, kind)

    @classmethod
    def from_edges(cls, src, dst, num_nodes, kind="social"):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        m = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(num_nodes, num_nodes))
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr.astype(np.int64), m.indices.astype(np.int64), kind)

    @classmethod
    def empty(cls, num_nodes, kind="social"):
        return cls(np.zeros(num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), kind)

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    @property
    def num_edges(self):
        return int(self.indptr[-1])

    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, node):
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def to_lists(self):
        return [self.neighbors(n).tolist() for n in range(self.num_nodes)]

    def edges(self):
        """``(src, dst)`` arrays, one entry per stored directed edge."""
        return np.repeat(np.arange(self.num_nodes), self.degrees()), self.indices.copy()

    def is_symmetric(self):
        src, dst = self.edges()
        fwd = set(zip(src.tolist(), dst.tolist()))
        return all((b, a) in fwd for a, b in fwd)

    def has_self_loops(self):
        src, dst = self.edges()
        return bool(np.any(src == dst))


@dataclass
class BipartiteIndex:
    """``items_of_user`` is R_I(u), ``users_of_item`` is R_U(i), as CSR graphs."""

    items_of_user: AdjacencyGraph
    users_of_item: AdjacencyGraph

    @property
    def num_users(self):
        return self.items_of_user.num_nodes

    @property
    def num_items(self):
        return self.users_of_item.num_nodes


def build_bipartite_index(train, num_users, num_items) -> BipartiteIndex:
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    r = sp.csr_matrix((np.ones(len(train)), (train[:, 0], train[:, 1])), shape=(num_users, num_items))
    r.sum_duplicates()
    r.sort_indices()
    rt = r.T.tocsr()
    rt.sort_indices()
    return BipartiteIndex(
        AdjacencyGraph(r.indptr.astype(np.int64), r.indices.astype(np.int64), "user-history"),
        AdjacencyGraph(rt.indptr.astype(np.int64), rt.indices.astype(np.int64), "item-history"),
    )


def _history(index: BipartiteIndex, side):
    if side == "user":
        return index.items_of_user
    if side == "item":
        return index.users_of_item
    raise ValueError(f"side must be 'user' or 'item', got {side!r}")


def collab_similarity(a, b, index: BipartiteIndex, side="user"):
    """Overlap of two histories normalized by the geometric mean of their sizes."""
    hist = _history(index, side)
    ha, hb = hist.neighbors(a), hist.neighbors(b)
    if len(ha) == 0 or len(hb) == 0:
        return 0.0
    common = len(np.intersect1d(ha, hb, assume_unique=True))
    return common / np.sqrt(len(ha) * len(hb))


def build_collab_graph(index: BipartiteIndex, side="user", eta=0.1) -> AdjacencyGraph:
    """Edges between distinct nodes whose collaborative similarity exceeds ``eta``.

    Candidate pairs come from the sparse co-occurrence product, so only pairs
    sharing at least one history element are ever scored.
    """
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    hist = _history(index, side)
    n = hist.num_nodes
    other = int(hist.indices.max()) + 1 if hist.num_edges else 0
    r = sp.csr_matrix((np.ones(hist.num_edges), hist.indices, hist.indptr), shape=(n, other))
    co = (r @ r.T).tocoo()
    deg = hist.degrees().astype(np.float64)
    off_diag = co.row != co.col
    rows, cols, common = co.row[off_diag], co.col[off_diag], co.data[off_diag]
    sim = common / np.sqrt(deg[rows] * deg[cols])
    keep = sim > eta
    kind = "user-collab" if side == "user" else "item-collab"
    return AdjacencyGraph.from_edges(rows[keep], cols[keep], n, kind)


def cap_neighbors(graph: AdjacencyGraph, cap=30, seed=0) -> AdjacencyGraph:
    """Keep a seeded uniform subset of at most ``cap`` neighbors per node."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    deg = graph.degrees()
    if not np.any(deg > cap):
        return AdjacencyGraph(graph.indptr.copy(), graph.indices.copy(), graph.kind)
    rng = np.random.default_rng(seed)
    lists = []
    for node in range(graph.num_nodes):
        nbrs = graph.neighbors(node)
        if len(nbrs) > cap:
            nbrs = np.sort(rng.choice(nbrs, size=cap, replace=False))
        lists.append(nbrs)
    return AdjacencyGraph.from_lists(lists, graph.kind)


def _sub_seeds(seed):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(5)]


def _capped_history(index, cap, seeds):
    return BipartiteIndex(
        cap_neighbors(index.items_of_user, cap, seeds[3]),
        cap_neighbors(index.users_of_item, cap, seeds[4]),
    )


@dataclass
class GraphBundle:
    """Every neighbor structure the model reads, already capped.

    ``index`` holds the full training histories; ``history`` the capped ones
    used by modulation (R_I(u), R_U(i)).
    """

    index: BipartiteIndex
    history: BipartiteIndex
    social: AdjacencyGraph
    user_collab: AdjacencyGraph
    item_collab: AdjacencyGraph
    eta: float = 0.1
    neighbor_cap: int = 30
    history_cap: int = 50
    seed: int = 0


def build_graphs(train, num_users, num_items, social_src=(), social_dst=(), eta=0.1,
                 neighbor_cap=30, history_cap=50, seed=0) -> GraphBundle:
    index = build_bipartite_index(train, num_users, num_items)
    seeds = _sub_seeds(seed)
    social = AdjacencyGraph.from_edges(social_src, social_dst, num_users, "social")
    history = _capped_history(index, history_cap, seeds)
    return GraphBundle(
        index=index,
        history=history,
        social=cap_neighbors(social, neighbor_cap, seeds[0]),
        user_collab=cap_neighbors(build_collab_graph(index, "user", eta), neighbor_cap, seeds[1]),
        item_collab=cap_neighbors(build_collab_graph(index, "item", eta), neighbor_cap, seeds[2]),
        eta=eta,
        neighbor_cap=neighbor_cap,
        history_cap=history_cap,
        seed=seed,
    )


_FILES = {
    "social": "graph_social.txt",
    "user_collab": "graph_user_collab.txt",
    "item_collab": "graph_item_collab.txt",
}


def _write_edges(path, graph):
    src, dst = graph.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in zip(src.tolist(), dst.tolist()):
            fh.write(f"{a} {b}\n")


def _read_edges(path, num_nodes, kind):
    text = Path(path).read_text()
    if not text.strip():
        return AdjacencyGraph.empty(num_nodes, kind)
    e = np.loadtxt(path, dtype=np.int64, ndmin=2)
    return AdjacencyGraph.from_edges(e[:, 0], e[:, 1], num_nodes, kind)


def save_graphs(directory, graphs: GraphBundle):
    """Persist the capped graphs as edge lists plus ``graph_manifest.txt``.

    Histories are not stored; they are rebuilt from the train split with the
    recorded cap and seed.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"eta": repr(float(graphs.eta)), "neighbor_cap": graphs.neighbor_cap,
            "history_cap": graphs.history_cap, "seed": graphs.seed}
    for attr, fname in _FILES.items():
        g = getattr(graphs, attr)
        _write_edges(directory / fname, g)
        meta[f"{attr}.kind"] = g.kind
        meta[f"{attr}.edges"] = g.num_edges
    write_keyvalue(directory / "graph_manifest.txt", meta)


def load_graphs(directory, train, num_users, num_items) -> GraphBundle:
    directory = Path(directory)
    meta = read_keyvalue(directory / "graph_manifest.txt")
    eta = float(meta["eta"])
    ncap, hcap, seed = int(meta["neighbor_cap"]), int(meta["history_cap"]), int(meta["seed"])
    index = build_bipartite_index(train, num_users, num_items)
    history = _capped_history(index, hcap, _sub_seeds(seed))
    sizes = {"social": num_users, "user_collab": num_users, "item_collab": num_items}
    loaded = {
        attr: _read_edges(directory / fname, sizes[attr], meta[f"{attr}.kind"])
        for attr, fname in _FILES.items()
    }
    return GraphBundle(index, history, eta=eta, neighbor_cap=ncap,
                       history_cap=hcap, seed=seed, **loaded)
