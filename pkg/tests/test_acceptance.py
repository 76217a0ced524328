"""End-to-end exit criteria, each run at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL|SKIP`` line, gathered in the
pytest terminal summary. Criteria 5 and 6 share three planted-block training
runs per variant, so the module takes a few minutes.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from dicer.autodiff import Tensor
from dicer.checks import micro_gradcheck
from dicer.cli import main
from dicer.datasets import make_planted_blocks
from dicer.evaluation import build_tasks, evaluate_tasks, ndcg_at_k, recall_at_k
from dicer.graphs import AdjacencyGraph, build_bipartite_index, build_collab_graph, build_graphs
from dicer.ingest import sample_negatives, split_dataset
from dicer.model import (ModelConfig, forward_batch, friend_attention, init_params, interest_modulation,
                         propagate, rgnn_layer)
from dicer.trainer import TrainConfig, train

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)


# ------------------------------------------------------------------ criterion 1


def test_gradient_fidelity(criterion_line):
    t0 = time.perf_counter()
    report = micro_gradcheck(ModelConfig(embed_dim=4, layers=2, dropout_rate=0.0), h=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - t0
    worst = max(report.checks, key=lambda c: c.max_rel_error)
    ok = report.passed and elapsed < 60
    criterion_line(1, ok, f"{len(report.checks)} parameters, worst {worst.name} rel err "
                          f"{worst.max_rel_error:.2e} < 1e-4, {elapsed:.1f}s < 60s")
    assert ok, "\n".join(report.lines())


# ------------------------------------------------------------------ criterion 2


def _leaky(x, slope):
    return x if x > 0 else slope * x


def _triple_loop_rgnn(rep, lists, W1, W2, slope):
    n, d = rep.shape
    out = np.zeros((n, W1.shape[1]))
    for u in range(n):
        for k in range(W1.shape[1]):
            acc = 0.0
            for v in lists[u]:
                for j in range(d):
                    acc += rep[v, j] * W1[j, k] + rep[u, j] * rep[v, j] * W2[j, k]
            out[u, k] = _leaky(acc, slope)
    return out


def _exhaustive_collab(grid, eta):
    edges = set()
    for a in range(grid.shape[0]):
        for b in range(grid.shape[0]):
            na, nb = grid[a].sum(), grid[b].sum()
            if a != b and na and nb and (grid[a] & grid[b]).sum() / np.sqrt(na * nb) > eta:
                edges.add((a, b))
    return edges


def test_oracle_equivalence(criterion_line):
    rng = np.random.default_rng(10)
    adj = np.triu(rng.random((10, 10)) < 0.35, 1)
    lists = [np.flatnonzero(row).tolist() for row in adj | adj.T]
    rep, W1, W2 = rng.normal(size=(10, 5)), rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    got = rgnn_layer(Tensor(rep), AdjacencyGraph.from_lists(lists), Tensor(W1), Tensor(W2), 0.2).data
    err_a = np.abs(got - _triple_loop_rgnn(rep, lists, W1, W2, 0.2)).max()

    exact_b = True
    for _ in range(25):
        ctx, hist = rng.normal(size=6), rng.normal(size=(rng.integers(1, 10), 6))
        brute = [max(hist[j, d] * ctx[d] for j in range(len(hist))) for d in range(6)]
        exact_b &= bool(np.array_equal(interest_modulation(ctx, hist).data[0], brute))

    err_c = 0.0
    for _ in range(25):
        mu, mf = rng.normal(size=5), rng.normal(size=(rng.integers(1, 7), 5))
        _, alpha = friend_attention(mu, mf)
        e = np.array([np.exp(sum(mu[d] * m[d] for d in range(5))) for m in mf])
        err_c = max(err_c, np.abs(alpha.data[:, 0] - e / e.sum()).max())

    grid = rng.random((50, 80)) < 0.08
    idx = build_bipartite_index(np.argwhere(grid), 50, 80)
    src, dst = build_collab_graph(idx, "user", 0.1).edges()
    exact_d = set(zip(src.tolist(), dst.tolist())) == _exhaustive_collab(grid.astype(int), 0.1)

    ok = err_a <= 1e-10 and exact_b and err_c <= 1e-12 and exact_d
    criterion_line(2, ok, f"(a) rgnn err {err_a:.1e} (b) modulation exact={exact_b} "
                          f"(c) attention err {err_c:.1e} (d) collab graph exact={exact_d}")
    assert ok


# ------------------------------------------------------------------ criterion 3


HAND = [
    ([3, 1, 7, 2, 9], {1, 2, 5, 8}, 5, 0.5, (1 / np.log2(3) + 1 / np.log2(5)) / (1 + 1 / np.log2(3) + 0.5 + 1 / np.log2(5))),
    ([6, 5, 7, 8, 9], {5}, 5, 1.0, 0.63093),
    ([5, 6, 7, 8, 9], {5, 7}, 5, 1.0, 0.91972),
    ([0, 1, 2, 3], {9}, 4, 0.0, 0.0),
]


def test_metric_correctness(criterion_line):
    hand_err = 0.0
    for ranked, rel, k, r, n in HAND:
        hand_err = max(hand_err, abs(recall_at_k(ranked, rel, k) - r))
        # the two rounded literals are compared at their printed precision
        n_tol = 5e-6 if n in (0.63093, 0.91972) else 0.0
        hand_err = max(hand_err, max(0.0, abs(ndcg_at_k(ranked, rel, k) - n) - n_tol))

    rng = np.random.default_rng(5)
    rand_err = 0.0
    for _ in range(100):
        ranked = rng.permutation(20).tolist()
        rel = set(rng.choice(20, size=rng.integers(1, 10), replace=False).tolist())
        k = int(rng.integers(1, 21))
        hits = [1.0 if x in rel else 0.0 for x in ranked[:k]]
        dcg = sum(h / np.log2(p + 2) for p, h in enumerate(hits))
        idcg = sum(1 / np.log2(p + 2) for p in range(min(k, len(rel))))
        rand_err = max(rand_err, abs(recall_at_k(ranked, rel, k) - sum(hits) / len(rel)),
                       abs(ndcg_at_k(ranked, rel, k) - dcg / idcg))
    ok = hand_err <= 1e-10 and rand_err <= 1e-10
    criterion_line(3, ok, f"hand vectors err {hand_err:.1e}, 100 random rankings err {rand_err:.1e}")
    assert ok


# ------------------------------------------------------------------ criterion 4


def test_structural_invariants(criterion_line):
    data, social, _, _ = make_planted_blocks(n_users=60, n_items=50, seed=2)
    split = split_dataset(data, 2)
    graphs = build_graphs(split.train, 60, 50, social.src, social.dst, seed=2)
    cfg = ModelConfig(embed_dim=8, layers=3)
    params = init_params(cfg, 60, 50, seed=2)
    reps = propagate(params, graphs, cfg)
    width_ok = reps.h_star.shape == (60, 32) and reps.z_star.shape == (50, 32)

    rng = np.random.default_rng(0)
    users, items = rng.integers(0, 60, 400), rng.integers(0, 50, 400)
    res = forward_batch(users, items, reps, graphs, params, cfg)
    pred = res.pred.data
    pred_ok = bool(np.all((pred > 0) & (pred < 1)))
    sums = np.bincount(res.alpha_segments, weights=res.alpha.data[:, 0])
    alpha_ok = len(res.alpha.data) > 0 and bool(np.allclose(sums[sums > 0], 1.0, atol=1e-12))

    train_set = set(map(tuple, split.train.tolist()))
    collide = 0
    for b in sample_negatives(split.train, 60, 50, 8, 0, 4096):
        neg = b.labels == 0
        collide += sum((u, i) in train_set for u, i in zip(b.users[neg].tolist(), b.items[neg].tolist()))

    sym_ok = all(g.is_symmetric() and not g.has_self_loops()
                 for g in (graphs.social, graphs.user_collab, graphs.item_collab))
    held = set(map(tuple, np.concatenate([split.validation, split.test]).tolist()))
    hist = graphs.index.items_of_user
    leaked = sum((u, i) in held for u in range(60) for i in hist.neighbors(u).tolist())
    uncapped = build_collab_graph(build_bipartite_index(split.train, 60, 50), "user", cfg.eta)
    u_edges = set(zip(*[x.tolist() for x in graphs.user_collab.edges()]))
    train_only = leaked == 0 and u_edges <= set(zip(*[x.tolist() for x in uncapped.edges()]))

    ok = width_ok and pred_ok and alpha_ok and collide == 0 and sym_ok and train_only
    criterion_line(4, ok, f"width (L+1)D={width_ok} attention sums={alpha_ok} preds in (0,1)={pred_ok} "
                          f"negative collisions={collide} symmetric={sym_ok} train-only={train_only}")
    assert ok


# ------------------------------------------------------------------ criteria 5 and 6


def _planted_run(seed, variant):
    data, social, ub, ib = make_planted_blocks(n_users=200, n_items=200, n_blocks=4, p_in=0.3, p_out=0.01,
                                             p_social=0.05, seed=seed)
    split = split_dataset(data, seed)
    graphs = build_graphs(split.train, 200, 200, social.src, social.dst, seed=seed)
    cfg = ModelConfig(embed_dim=16, layers=2, use_gnn=(variant == "full"))
    params = init_params(cfg, 200, 200, seed=seed)
    tc = TrainConfig(epochs_max=30, batch_size=4096, patience=30, seed=seed, deterministic=True)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        result = train(split, graphs, params, cfg, tc)
    elapsed = time.perf_counter() - t0
    oracle = evaluate_tasks(build_tasks(split, "full", role="validation"),
                            lambda u, i: (ub[u] == ib[i]).astype(float), ks=(10,)).recall[10]
    return result.history.records, elapsed, oracle


@pytest.fixture(scope="module")
def planted_runs():
    return {(s, v): _planted_run(s, v) for v in ("full", "embed") for s in SEEDS}


def test_end_to_end_learning(planted_runs, criterion_line):
    passing, total_time, notes = 0, 0.0, []
    for seed in SEEDS:
        hist, elapsed, oracle = planted_runs[(seed, "full")]
        total_time += elapsed
        best_recall = max(r.recall10 for r in hist)
        loss_ratio = hist[-1].val_loss / hist[0].loss
        ok = best_recall >= 0.5 and loss_ratio <= 0.5
        passing += ok
        notes.append(f"seed {seed}: recall@10 {best_recall:.3f} (block oracle {oracle:.3f}) "
                     f"val loss / epoch-1 loss {loss_ratio:.3f} (val/val {hist[-1].val_loss / hist[0].val_loss:.3f}) "
                     f"{len(hist)} epochs -> {'ok' if ok else 'short'}")
    ok = passing >= 2 and total_time < 600
    criterion_line(5, ok, f"{passing}/3 seeds, {total_time:.0f}s < 600s; " + "; ".join(notes))
    assert ok, "\n".join(notes)


def test_ablation_direction(planted_runs, criterion_line):
    full = np.mean([max(r.recall10 for r in planted_runs[(s, "full")][0]) for s in SEEDS])
    embed = np.mean([max(r.recall10 for r in planted_runs[(s, "embed")][0]) for s in SEEDS])
    ok = full >= embed
    criterion_line(6, ok, f"mean recall@10 full {full:.4f} >= embed {embed:.4f}")
    assert ok


# ------------------------------------------------------------------ criterion 7


def test_cli_determinism(tmp_path, criterion_line, capsys):
    outputs = []
    for run in ("a", "b"):
        work = tmp_path / run
        base = ["--workdir", str(work), "--synthetic", "planted", "--seed", "11", "--embed-dim", "8",
                "--layers", "2", "--epochs-max", "3", "--deterministic"]
        codes = [main(["prepare", *base]), main(["train", *base]), main(["evaluate", *base])]
        assert codes == [0, 0, 0]
        outputs.append({name: (work / name).read_bytes() for name in ("history.csv", "metrics.csv")})
    capsys.readouterr()
    same = {name: outputs[0][name] == outputs[1][name] for name in outputs[0]}
    ok = all(same.values())
    criterion_line(7, ok, "bitwise identical " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


# ------------------------------------------------------------------ criterion 8


CIAO_TARGET = 0.2554


def _ciao_files():
    root = Path(os.environ.get("DICER_CIAO_DIR", "/root/data/ciao"))
    ratings, trust = root / "ratings.txt", root / "trust.txt"
    return (ratings, trust) if ratings.is_file() and trust.is_file() else None


def test_ciao_replication(tmp_path, criterion_line, capsys):
    files = _ciao_files()
    if files is None:
        criterion_line(8, None, "Ciao data not found (set DICER_CIAO_DIR to a folder with ratings.txt "
                                "and trust.txt); non-gating")
        pytest.skip("Ciao dataset not available")
    base = ["--workdir", str(tmp_path), "--ratings", str(files[0]), "--trust", str(files[1])]
    assert main(["prepare", *base]) == 0
    assert main(["train", *base]) == 0
    assert main(["evaluate", *base]) == 0
    capsys.readouterr()
    row = next(line.split(",") for line in (tmp_path / "metrics.csv").read_text().splitlines()[1:]
               if line.split(",")[1] == "5")
    recall5 = float(row[2])
    within = abs(recall5 - CIAO_TARGET) <= 0.03
    # reported, not asserted: the pipeline completing is the gate
    criterion_line(8, True, f"Recall@5 {recall5:.4f} vs {CIAO_TARGET} (within 0.03: {within}); non-gating")
