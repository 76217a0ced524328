"""scikit-learn style wrapper around graph building, training and scoring."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import RankingTask, evaluate_tasks, model_scorer, rank_candidates
from .graphs import build_graphs
from .ingest import DatasetSplit
from .model import ModelConfig, apply_variant, init_params, predict_pairs
from .trainer import TrainConfig, train
from .validation import check_interactions, check_social, check_users


class DICERRecommender(BaseEstimator):
    """Social recommender over implicit (user, item) feedback.

    ``fit(X, social=...)`` takes an ``(n, 2)`` array of observed pairs and an
    optional ``(m, 2)`` array of friendships. A seeded ``validation_fraction``
    of ``X`` is held out for early stopping unless ``validation`` is given.

    Example::

        rec = DICERRecommender(embed_dim=16, layers=2, epochs_max=20).fit(X, social=S)
        top = rec.recommend([0, 1], k=10)
    """

    def __init__(self, embed_dim=64, layers=3, lambda1=1 / 3, lambda2=1 / 3, lambda3=1 / 3,
                 leaky_slope=0.2, dropout_rate=0.3, eta=0.1, neighbor_cap=30, history_cap=50,
                 variant="full", epochs_max=100, batch_size=4096, neg_ratio=8, patience=10,
                 lr=0.001, validation_fraction=0.1, random_state=0, verbose=False):
        self.embed_dim = embed_dim
        self.layers = layers
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.leaky_slope = leaky_slope
        self.dropout_rate = dropout_rate
        self.eta = eta
        self.neighbor_cap = neighbor_cap
        self.history_cap = history_cap
        self.variant = variant
        self.epochs_max = epochs_max
        self.batch_size = batch_size
        self.neg_ratio = neg_ratio
        self.patience = patience
        self.lr = lr
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self):
        base = ModelConfig(
            embed_dim=self.embed_dim, layers=self.layers, lambda1=self.lambda1, lambda2=self.lambda2,
            lambda3=self.lambda3, leaky_slope=self.leaky_slope, dropout_rate=self.dropout_rate,
            eta=self.eta, neighbor_cap=self.neighbor_cap, history_cap=self.history_cap,
        )
        return apply_variant(base, self.variant)

    def _split(self, X, validation, num_users, num_items):
        seed = int(self.random_state)
        if validation is not None:
            return DatasetSplit(X, validation, np.zeros((0, 2), dtype=np.int64), num_users, num_items, seed)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        perm = np.random.default_rng(seed).permutation(len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        return DatasetSplit(X[perm[n_val:]], X[perm[:n_val]], np.zeros((0, 2), dtype=np.int64),
                            num_users, num_items, seed)

    def fit(self, X, y=None, social=None, validation=None, num_users=None, num_items=None):
        X = np.unique(check_interactions(X, num_users, num_items), axis=0)
        val = None if validation is None else check_interactions(validation, num_users, num_items, "validation")
        hi = np.vstack([X, val]) if val is not None else X
        self.num_users_ = int(num_users if num_users is not None else hi[:, 0].max() + 1)
        self.num_items_ = int(num_items if num_items is not None else hi[:, 1].max() + 1)
        S = check_social(social, self.num_users_)
        S = S[S[:, 0] != S[:, 1]]
        src, dst = np.concatenate([S[:, 0], S[:, 1]]), np.concatenate([S[:, 1], S[:, 0]])

        config = self._model_config()
        split = self._split(X, val, self.num_users_, self.num_items_)
        seed = int(self.random_state)
        graphs = build_graphs(split.train, self.num_users_, self.num_items_, src, dst, eta=config.eta,
                              neighbor_cap=config.neighbor_cap, history_cap=config.history_cap, seed=seed)
        params = init_params(config, self.num_users_, self.num_items_, seed=seed)
        tc = TrainConfig(epochs_max=self.epochs_max, batch_size=self.batch_size, neg_ratio=self.neg_ratio,
                         patience=self.patience, lr=self.lr, seed=seed)
        result = train(split, graphs, params, config, tc, log=print if self.verbose else None)

        self.config_ = config
        self.graphs_ = graphs
        self.params_ = result.best.tensors()
        self.history_ = result.history
        self.best_epoch_ = result.best.epoch
        self._train_items = split.user_items("train")
        return self

    def predict_proba(self, X):
        """Interaction probability for each (user, item) row of ``X``."""
        check_is_fitted(self, "params_")
        X = check_interactions(X, self.num_users_, self.num_items_)
        return predict_pairs(self.params_, self.graphs_, self.config_, X[:, 0], X[:, 1])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def _candidates(self, user, exclude_seen):
        mask = np.ones(self.num_items_, dtype=bool)
        if exclude_seen:
            mask[list(self._train_items.get(int(user), ()))] = False
        return np.flatnonzero(mask)

    def recommend(self, users, k=10, exclude_seen=True):
        """Top-``k`` items per user, best first; rows are padded with -1 if fewer exist."""
        check_is_fitted(self, "params_")
        users = check_users(users, self.num_users_)
        scorer = model_scorer(self.params_, self.graphs_, self.config_)
        out = np.full((len(users), k), -1, dtype=np.int64)
        for row, u in enumerate(users):
            cands = self._candidates(u, exclude_seen)
            if not len(cands):
                continue
            ranked = rank_candidates(cands, scorer(np.full(len(cands), u), cands))[:k]
            out[row, :len(ranked)] = ranked
        return out

    def score(self, X, y=None, k=10):
        """Mean Recall@``k`` of held-out pairs ``X`` ranked against every unseen item."""
        check_is_fitted(self, "params_")
        X = check_interactions(X, self.num_users_, self.num_items_)
        relevant = {}
        for u, i in X:
            relevant.setdefault(int(u), set()).add(int(i))
        tasks = []
        for u in sorted(relevant):
            rel = relevant[u] - self._train_items.get(u, set())
            if rel:
                tasks.append(RankingTask(u, frozenset(rel), self._candidates(u, True)))
        report = evaluate_tasks(tasks, model_scorer(self.params_, self.graphs_, self.config_), ks=(k,))
        return report.recall[k]
