"""Top-K ranking evaluation (Recall@K, NDCG@K)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .ingest import DatasetSplit
from .model import predict_pairs, propagate

DEFAULT_KS = (5, 10, 15)


@dataclass
class RankingTask:
    user: int
    relevant: frozenset
    candidates: np.ndarray


@dataclass(frozen=True)
class CandidatePolicy:
    kind: str = "full"
    n: int = 0
    seed: int = 0

    @classmethod
    def parse(cls, text):
        """``full`` or ``sampled:<n>[:seed=<s>]``."""
        if isinstance(text, CandidatePolicy):
            return text
        parts = str(text).strip().split(":")
        if parts[0] == "full" and len(parts) == 1:
            return cls("full")
        if parts[0] == "sampled" and len(parts) in (2, 3):
            try:
                n = int(parts[1])
                seed = 0
                if len(parts) == 3:
                    key, _, value = parts[2].partition("=")
                    if key != "seed":
                        raise ValueError(key)
                    seed = int(value)
            except ValueError:
                raise ConfigError(f"bad candidate policy {text!r}") from None
            if n < 1:
                raise ConfigError(f"sampled policy needs n >= 1, got {n}")
            return cls("sampled", n, seed)
        raise ConfigError(f"bad candidate policy {text!r}; use 'full' or 'sampled:N[:seed=S]'")

    def __str__(self):
        return "full" if self.kind == "full" else f"sampled:{self.n}:seed={self.seed}"


def build_tasks(split: DatasetSplit, policy="full", role="test"):
    """One task per user with at least one positive in the ``role`` part.

    ``role="test"``: candidates exclude the user's train and validation items.
    ``role="validation"``: candidates exclude the user's train items only.
    ``sampled`` policies rank the relevant items against ``n`` seeded random
    items the user never interacted with.
    """
    policy = CandidatePolicy.parse(policy)
    if role not in ("test", "validation"):
        raise ValueError(f"role must be 'test' or 'validation', got {role!r}")
    excluded_parts = ("train", "validation") if role == "test" else ("train",)
    excluded = split.user_items(excluded_parts)
    relevant = split.user_items(role)
    everything = split.user_items(("train", "validation", "test"))
    all_items = np.arange(split.num_items)
    rng = np.random.default_rng(policy.seed)
    tasks = []
    for user in sorted(relevant):
        rel = relevant[user] - excluded.get(user, set())
        if not rel:
            continue
        if policy.kind == "full":
            mask = np.ones(split.num_items, dtype=bool)
            mask[list(excluded.get(user, ()))] = False
            cands = all_items[mask]
        else:
            mask = np.ones(split.num_items, dtype=bool)
            mask[list(everything.get(user, ()))] = False
            pool = all_items[mask]
            take = min(policy.n, len(pool))
            sampled = rng.choice(pool, size=take, replace=False) if take else pool[:0]
            cands = np.sort(np.concatenate([np.fromiter(rel, dtype=np.int64), sampled]))
        tasks.append(RankingTask(user, frozenset(rel), cands))
    return tasks


def recall_at_k(ranked, relevant, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    return len(set(np.asarray(ranked)[:k].tolist()) & set(relevant)) / len(relevant)


def ndcg_at_k(ranked, relevant, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    top = np.asarray(ranked)[:k]
    gains = np.array([item in relevant for item in top.tolist()], dtype=np.float64)
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float(gains @ discounts)
    ideal = min(k, len(relevant))
    idcg = float(np.sum(1.0 / np.log2(np.arange(2, ideal + 2))))
    return dcg / idcg


def rank_candidates(candidates, scores):
    """Candidates by descending score, ties broken by ascending item index."""
    candidates = np.asarray(candidates)
    order = np.lexsort((candidates, -np.asarray(scores)))
    return candidates[order]


@dataclass
class MetricsReport:
    ks: tuple
    recall: dict
    ndcg: dict
    users: int
    variant: str = "full"
    config: dict = field(default_factory=dict)

    def rows(self):
        for k in self.ks:
            yield {"variant": self.variant, "K": k, "recall": self.recall[k],
                   "ndcg": self.ndcg[k], "users": self.users}

    def table(self):
        head = f"{'variant':<12} {'K':>3} {'recall':>8} {'ndcg':>8} {'users':>6}"
        lines = [head, "-" * len(head)]
        for r in self.rows():
            lines.append(f"{r['variant']:<12} {r['K']:>3} {r['recall']:>8.4f} {r['ndcg']:>8.4f} {r['users']:>6}")
        return "\n".join(lines)


CSV_FIELDS = ("variant", "K", "recall", "ndcg", "users")


def write_reports_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for report in reports:
            for row in report.rows():
                w.writerow({**row, "recall": repr(float(row["recall"])), "ndcg": repr(float(row["ndcg"]))})


def evaluate_tasks(tasks, scorer, ks=DEFAULT_KS, variant="full", config=None):
    """Average Recall@K / NDCG@K over tasks using ``scorer(users, items) -> scores``."""
    ks = tuple(int(k) for k in ks)
    if not tasks:
        return MetricsReport(ks, {k: 0.0 for k in ks}, {k: 0.0 for k in ks}, 0, variant, config or {})
    users = np.concatenate([np.full(len(t.candidates), t.user) for t in tasks])
    items = np.concatenate([t.candidates for t in tasks])
    scores = np.asarray(scorer(users, items), dtype=np.float64)
    recall = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    start = 0
    for t in tasks:
        stop = start + len(t.candidates)
        ranked = rank_candidates(t.candidates, scores[start:stop])
        start = stop
        for k in ks:
            recall[k] += recall_at_k(ranked, t.relevant, k)
            ndcg[k] += ndcg_at_k(ranked, t.relevant, k)
    n = len(tasks)
    return MetricsReport(ks, {k: recall[k] / n for k in ks}, {k: ndcg[k] / n for k in ks}, n,
                         variant, config or {})


def model_scorer(params, graphs, config, chunk=4096):
    """Scorer over an immutable parameter snapshot; propagation runs once."""
    reps = propagate(params, graphs, config)

    def scorer(users, items):
        return predict_pairs(params, graphs, config, users, items, chunk=chunk, reps=reps)

    return scorer


def evaluate(params, config, split, graphs, policy="full", ks=DEFAULT_KS, role="test", variant="full"):
    tasks = build_tasks(split, policy, role)
    return evaluate_tasks(tasks, model_scorer(params, graphs, config), ks, variant, config.to_dict())
