"""Mini-batch training loop, early stopping, and checkpoint files."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, read_tensors, write_tensors
from .autodiff.serialization import read_manifest
from .evaluation import build_tasks, evaluate_tasks, model_scorer
from .exceptions import CheckpointError, ConfigError, NumericalError, ShapeError
from .ingest import DatasetSplit, draw_negatives, sample_negatives
from .model import ModelConfig, forward_batch, loss, param_shapes, propagate

CHECKPOINT_KIND = "dicer-checkpoint"
HISTORY_FIELDS = ("epoch", "loss", "recall10", "ndcg10", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 100
    batch_size: int = 4096
    neg_ratio: int = 8
    patience: int = 10
    eval_every: int = 1
    seed: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    deterministic: bool = False

    def __post_init__(self):
        for name in ("epochs_max", "batch_size", "neg_ratio", "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recall10: float
    ndcg10: float
    seconds: float
    val_loss: float = float("nan")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.recall10), repr(r.ndcg10), repr(r.seconds)])


@dataclass
class Checkpoint:
    params: dict
    adam: dict
    config: ModelConfig
    num_users: int
    num_items: int
    epoch: int = 0
    metrics: dict = field(default_factory=dict)

    def tensors(self):
        """Fresh leaf tensors holding copies of the stored parameters."""
        return {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}


@dataclass
class TrainResult:
    best: Checkpoint
    history: TrainHistory
    evaluations: int = 0


def snapshot(params, adam, config, num_users, num_items, epoch=0, metrics=None):
    return Checkpoint(
        {k: p.data.copy() for k, p in params.items()},
        {k: s.copy() for k, s in adam.items()},
        config, num_users, num_items, epoch, dict(metrics or {}),
    )


def validation_pairs(split: DatasetSplit, ratio, seed):
    """Fixed labeled validation set: validation positives plus ``ratio`` negatives each."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7661]))
    val = np.asarray(split.validation, dtype=np.int64).reshape(-1, 2)
    if len(val) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    neg_u, neg_i = draw_negatives(val, split.num_users, split.num_items, ratio, rng,
                                  exclude=np.concatenate([split.train.reshape(-1, 2), val]))
    users = np.concatenate([val[:, 0], neg_u])
    items = np.concatenate([val[:, 1], neg_i])
    labels = np.concatenate([np.ones(len(val)), np.zeros(len(neg_u))])
    return users, items, labels


def mean_bce(preds, labels):
    p = np.clip(preds, 1e-7, 1 - 1e-7)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))


def train(split: DatasetSplit, graphs, params, model_config: ModelConfig, train_config: TrainConfig,
          log=None) -> TrainResult:
    """Train ``params`` in place; return the best-validation checkpoint and the history.

    Each epoch resamples negatives from ``(seed, epoch)``, runs
    forward/backward/Adam per batch, then (every ``eval_every`` epochs)
    ranks validation items. The checkpoint with the highest validation
    NDCG@10 is kept; training stops after ``patience`` evaluations without
    strict improvement, or at ``epochs_max``.
    """
    tc = train_config
    say = log or (lambda msg: None)
    adam = {k: AdamState.zeros_like(p, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
            for k, p in params.items()}
    val_tasks = build_tasks(split, "full", role="validation")
    vu, vi, vl = validation_pairs(split, tc.neg_ratio, tc.seed)
    history = TrainHistory()
    best = None
    best_ndcg = -np.inf
    bad = 0
    evaluations = 0

    for epoch in range(1, tc.epochs_max + 1):
        t0 = time.perf_counter()
        batches = sample_negatives(split.train, split.num_users, split.num_items, tc.neg_ratio,
                                   (tc.seed, epoch), tc.batch_size)
        drop_rng = np.random.default_rng(np.random.SeedSequence([int(tc.seed), int(epoch), 1]))
        total, count = 0.0, 0
        for b, batch in enumerate(batches):
            try:
                with Tape() as tape:
                    reps = propagate(params, graphs, model_config)
                    out = forward_batch(batch.users, batch.items, reps, graphs, params, model_config,
                                        train=True, rng=drop_rng)
                    batch_loss = loss(out.pred, batch.labels)
                grads = tape.backward(batch_loss)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from exc
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"epoch {epoch}, batch {b}: non-finite loss {value}")
            for name, p in params.items():
                g = grads.get(p)
                adam_step(p, np.zeros_like(p.data) if g is None else g, adam[name])
                p.grad = None
            total += value
            count += len(batch)
        epoch_loss = total / max(count, 1)

        recall10 = ndcg10 = val_loss = float("nan")
        evaluated = epoch % tc.eval_every == 0
        if evaluated:
            evaluations += 1
            scorer = model_scorer(params, graphs, model_config)
            report = evaluate_tasks(val_tasks, scorer, ks=(10,))
            recall10, ndcg10 = report.recall[10], report.ndcg[10]
            if len(vu):
                val_loss = mean_bce(scorer(vu, vi), vl)
        seconds = 0.0 if tc.deterministic else time.perf_counter() - t0
        history.records.append(EpochRecord(epoch, epoch_loss, recall10, ndcg10, seconds, val_loss))
        say(f"epoch {epoch:3d} loss {epoch_loss:.5f} val_loss {val_loss:.5f} "
            f"recall@10 {recall10:.4f} ndcg@10 {ndcg10:.4f} ({seconds:.1f}s)")

        if not evaluated:
            continue
        if ndcg10 > best_ndcg:
            best_ndcg = ndcg10
            bad = 0
            best = snapshot(params, adam, model_config, split.num_users, split.num_items, epoch,
                            {"recall10": recall10, "ndcg10": ndcg10})
        else:
            bad += 1
            if bad >= tc.patience:
                say(f"early stop after epoch {epoch}: {bad} evaluation(s) without improvement")
                break

    if best is None:
        best = snapshot(params, adam, model_config, split.num_users, split.num_items,
                        history.records[-1].epoch if history.records else 0)
    return TrainResult(best, history, evaluations)


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, ckpt: Checkpoint):
    tensors = {}
    adam_meta = {}
    for name, arr in ckpt.params.items():
        tensors[f"param/{name}"] = arr
        state = ckpt.adam.get(name)
        if state is not None:
            tensors[f"adam_m/{name}"] = state.m
            tensors[f"adam_v/{name}"] = state.v
            adam_meta[name] = {"t": state.t, "lr": state.lr, "beta1": state.beta1,
                               "beta2": state.beta2, "eps": state.eps}
    meta = {
        "kind": CHECKPOINT_KIND,
        "model_config": ckpt.config.to_dict(),
        "num_users": ckpt.num_users,
        "num_items": ckpt.num_items,
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "param_names": list(ckpt.params),
        "adam": adam_meta,
    }
    write_tensors(path, tensors, meta)


def checkpoint_config(path) -> ModelConfig:
    """Just the model config recorded in a checkpoint manifest."""
    meta = read_manifest(path)["meta"]
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a model checkpoint")
    return ModelConfig.from_dict(meta["model_config"])


def check_compatible(ckpt_config, shapes, expected: ModelConfig, num_users, num_items):
    """Raise ShapeError naming the first tensor that disagrees with ``expected``."""
    want = param_shapes(expected, num_users, num_items)
    for name in sorted(set(want) | set(shapes)):
        if name not in shapes:
            raise ShapeError(f"checkpoint lacks tensor {name!r} expected by the config (shape {want[name]})")
        if name not in want:
            raise ShapeError(f"checkpoint tensor {name!r} {tuple(shapes[name])} is not part of the config")
        if tuple(shapes[name]) != tuple(want[name]):
            raise ShapeError(
                f"tensor {name!r}: checkpoint shape {tuple(shapes[name])} != config shape {tuple(want[name])}"
            )
    differing = [f.name for f in fields(ModelConfig)
                 if f.name != "dropout_rate" and getattr(ckpt_config, f.name) != getattr(expected, f.name)]
    if differing:
        raise ConfigError(f"checkpoint config differs from the run config in: {differing}")


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    tensors, meta = read_tensors(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(meta["model_config"])
    params, adam = {}, {}
    for name in meta["param_names"]:
        key = f"param/{name}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        params[name] = tensors[key]
        if name in meta["adam"]:
            a = meta["adam"][name]
            adam[name] = AdamState(tensors[f"adam_m/{name}"], tensors[f"adam_v/{name}"], a["t"],
                                   a["lr"], a["beta1"], a["beta2"], a["eps"])
    m, n = int(meta["num_users"]), int(meta["num_items"])
    check_compatible(config, {k: v.shape for k, v in params.items()}, config, m, n)
    if expected_config is not None:
        check_compatible(config, {k: v.shape for k, v in params.items()}, expected_config, m, n)
    return Checkpoint(params, adam, config, m, n, int(meta["epoch"]), meta.get("metrics", {}))
