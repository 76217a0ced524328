"""``dicer`` command line: prepare | train | evaluate | ablate | gradcheck.

Every run-config key is also a ``--key value`` option that overrides the
``--config`` file. Outputs go under ``--workdir``::

    data/               splits, id maps, graphs and their manifests (prepare)
    raw/                generated ratings/trust files (prepare, synthetic only)
    checkpoint/         best checkpoint (train)
    history.csv         per-epoch training history (train)
    metrics.csv         test metrics (evaluate)
    ablate/<variant>/   checkpoint and history per variant (ablate)
    ablation.csv        combined comparison (ablate)

Exit status: 0 ok, 2 config error, 3 data error, 4 numerical failure,
5 gradient check failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checks import inject_fault, micro_gradcheck
from .config import RunConfig
from .datasets import make_planted_blocks
from .evaluation import evaluate, write_reports_csv
from .exceptions import CheckpointError, ConfigError, DataError, NumericalError, ShapeError
from .graphs import build_graphs, load_graphs, save_graphs
from .ingest import (export_interactions, file_digest, load_split, parse_interactions, parse_social,
                     read_keyvalue, save_split, split_dataset, write_keyvalue, write_pairs)
from .model import init_params
from .trainer import load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4, 5


def _out(msg):
    print(msg, flush=True)


# ------------------------------------------------------------------ prepare


def cmd_prepare(cfg: RunConfig):
    work = cfg.workpath
    data_dir = work / "data"
    if cfg.synthetic == "planted":
        ratings, trust = _write_planted(work / "raw", cfg.seed)
    else:
        if not cfg.ratings:
            raise ConfigError("no ratings file configured (set 'ratings' or 'synthetic = planted')")
        if not cfg.trust:
            raise ConfigError("no trust file configured (set 'trust')")
        ratings, trust = Path(cfg.ratings), Path(cfg.trust)
        for p in (ratings, trust):
            if not p.is_file():
                raise DataError(f"file not found: {p}")
    data = parse_interactions(ratings)
    social = parse_social(trust, data)
    split = split_dataset(data, cfg.seed)
    save_split(data_dir, split, data, extra={
        "ratings_sha256": file_digest(ratings),
        "trust_sha256": file_digest(trust),
        "social_pairs": len(social.src),
        "social_self_loops_dropped": social.self_loops_dropped,
        "social_unknown_dropped": social.unknown_dropped,
    })
    graphs = build_graphs(split.train, split.num_users, split.num_items, social.src, social.dst,
                          eta=cfg.eta, neighbor_cap=cfg.neighbor_cap, history_cap=cfg.history_cap,
                          seed=cfg.seed)
    save_graphs(data_dir, graphs)
    digests = {f"sha256.{p.name}": file_digest(p) for p in sorted(data_dir.glob("*.txt"))}
    write_keyvalue(work / "prepare_manifest.txt", digests)
    _out(f"prepared {work}: {split.num_users} users, {split.num_items} items, "
         f"{len(split.train)}/{len(split.validation)}/{len(split.test)} train/val/test, "
         f"edges social={graphs.social.num_edges} user_collab={graphs.user_collab.num_edges} "
         f"item_collab={graphs.item_collab.num_edges}")
    return EXIT_OK


def _write_planted(directory, seed):
    directory.mkdir(parents=True, exist_ok=True)
    data, social, _, _ = make_planted_blocks(seed=seed)
    ratings, trust = directory / "ratings.txt", directory / "trust.txt"
    export_interactions(ratings, data)
    write_pairs(trust, list(zip(social.src.tolist(), social.dst.tolist())))
    return ratings, trust


def _load_prepared(cfg: RunConfig):
    data_dir = cfg.workpath / "data"
    if not (data_dir / "split_manifest.txt").is_file() or not (data_dir / "graph_manifest.txt").is_file():
        raise DataError(f"workdir {cfg.workpath} is not prepared; run 'dicer prepare' first")
    split = load_split(data_dir)
    meta = read_keyvalue(data_dir / "graph_manifest.txt")
    recorded = {"eta": float(meta["eta"]), "neighbor_cap": int(meta["neighbor_cap"]),
                "history_cap": int(meta["history_cap"])}
    wanted = {"eta": cfg.eta, "neighbor_cap": cfg.neighbor_cap, "history_cap": cfg.history_cap}
    stale = [k for k in wanted if recorded[k] != wanted[k]]
    if stale:
        raise ConfigError(f"prepared graphs were built with different {stale}; re-run 'dicer prepare'")
    return split, load_graphs(data_dir, split.train, split.num_users, split.num_items)


# ------------------------------------------------------------------ train / evaluate


def _train_variant(cfg, split, graphs, variant, out_dir):
    model_cfg = cfg.model_config(variant)
    params = init_params(model_cfg, split.num_users, split.num_items, seed=cfg.seed)
    result = train(split, graphs, params, model_cfg, cfg.train_config(), log=_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint", result.best)
    result.history.write_csv(out_dir / "history.csv")
    return result


def cmd_train(cfg: RunConfig):
    split, graphs = _load_prepared(cfg)
    result = _train_variant(cfg, split, graphs, cfg.variant, cfg.workpath)
    _out(f"best epoch {result.best.epoch}: recall@10 {result.best.metrics.get('recall10', float('nan')):.4f} "
         f"ndcg@10 {result.best.metrics.get('ndcg10', float('nan')):.4f}; "
         f"checkpoint written to {cfg.workpath / 'checkpoint'}")
    return EXIT_OK


def _variant_label(name):
    name = name.lower()
    return name[len("dicer-"):] if name.startswith("dicer-") else name


def cmd_evaluate(cfg: RunConfig, checkpoint=None):
    split, graphs = _load_prepared(cfg)
    path = Path(checkpoint) if checkpoint else cfg.workpath / "checkpoint"
    ckpt = load_checkpoint(path, expected_config=cfg.model_config())
    report = evaluate(ckpt.tensors(), ckpt.config, split, graphs, cfg.policy, cfg.ks_tuple(),
                      role="test", variant=_variant_label(cfg.variant))
    write_reports_csv(cfg.workpath / "metrics.csv", [report])
    _out(report.table())
    return EXIT_OK


def cmd_ablate(cfg: RunConfig):
    names = cfg.variant_list()
    for name in names:
        cfg.model_config(name)  # fail fast on unknown or out-of-scope names
    split, graphs = _load_prepared(cfg)
    reports = []
    for name in names:
        label = _variant_label(name)
        _out(f"== variant {label}")
        result = _train_variant(cfg, split, graphs, name, cfg.workpath / "ablate" / label)
        reports.append(evaluate(result.best.tensors(), result.best.config, split, graphs, cfg.policy,
                                cfg.ks_tuple(), role="test", variant=label))
    write_reports_csv(cfg.workpath / "ablation.csv", reports)
    for r in reports:
        _out(r.table())
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, fault=None):
    with inject_fault(fault) if fault else nullcontext():
        report = micro_gradcheck(seed=cfg.seed)
    for line in report.lines():
        _out(line)
    _out(f"gradcheck {'PASSED' if report.passed else 'FAILED'} ({len(report.checks)} parameters, tol {report.tol:g})")
    return EXIT_OK if report.passed else EXIT_CHECK


# ------------------------------------------------------------------ arguments


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        opts = {"dest": f"cfg_{f.name}", "default": None, "metavar": "VALUE"}
        if isinstance(f.default, bool):
            opts.update(nargs="?", const="true")
        names = [flag] if "_" not in f.name else [flag, "--" + f.name]
        common.add_argument(*names, help=f"override '{f.name}' (default {f.default!r})", **opts)

    parser = argparse.ArgumentParser(prog="dicer", description="Social recommender pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="parse, split and build graphs")
    sub.add_parser("train", parents=[common], help="train one variant, write checkpoint + history")
    p_eval = sub.add_parser("evaluate", parents=[common], help="rank test items, write metrics CSV")
    p_eval.add_argument("--checkpoint", help="checkpoint directory (default <workdir>/checkpoint)")
    sub.add_parser("ablate", parents=[common], help="train and evaluate each of --variants")
    p_gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the micro-model")
    p_gc.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)
    return parser


def _run_config(args):
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig().with_overrides(overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        limits = threadpool_limits(limits=1) if cfg.deterministic else nullcontext()
        with limits:
            if args.command == "prepare":
                return cmd_prepare(cfg)
            if args.command == "train":
                return cmd_train(cfg)
            if args.command == "evaluate":
                return cmd_evaluate(cfg, args.checkpoint)
            if args.command == "ablate":
                return cmd_ablate(cfg)
            return cmd_gradcheck(cfg, args.inject_fault)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
