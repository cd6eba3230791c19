"""Command-line surface tying ingestion, training, evaluation, and statistics.

Exit codes: 0 on success, 2 on usage/config/data errors, 3 on numerical
divergence during training. Every command writing an output directory drops
exactly one manifest.json there, recording the argv, the resolved
configuration, a content hash of the dataset, and hashes of all artifacts,
which is enough to re-run the command and reproduce the outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, trainer
from .config import ConfigError, ModelConfig, PRESETS, preset_config
from .data import (AttributeTable, EmptyDatasetError, InteractionDataset,
                   ParseError, build_dataset, load_attributes, load_ratings)
from .embedding import CheckpointError, load_checkpoint, save_checkpoint

DATASET_FILE = "dataset.json"
ATTRIBUTES_FILE = "attributes.json"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, argv, config_dict, dataset_fp, artifacts) -> None:
    manifest = {
        "command": list(argv),
        "config": config_dict,
        "dataset_fingerprint": dataset_fp,
        "artifacts": {name: _sha256(out_dir / name) for name in artifacts},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_dataset_dir(path) -> InteractionDataset:
    ds_path = Path(path) / DATASET_FILE
    if not ds_path.exists():
        raise FileNotFoundError(f"no {DATASET_FILE} in {path}")
    return InteractionDataset.load(ds_path)


def _parse_fractions(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated fractions, got {text!r}")
    return tuple(parts)


def _parse_cutoffs(text: str):
    vals = sorted({int(x) for x in text.split(",")})
    if not vals or min(vals) < 1:
        raise ConfigError(f"bad cutoff list {text!r}")
    return vals


def cmd_ingest(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threshold = args.threshold
    if threshold is None and args.format == "movielens-dcolon":
        threshold = 4.0  # explicit-ratings default; implicit files pass None
    ratings = load_ratings(args.ratings, args.format, threshold=threshold)
    dataset = build_dataset(
        ratings,
        min_interactions=args.min_interactions,
        split=_parse_fractions(args.split),
        seed=args.seed,
        keep_cold_items=args.keep_cold_items,
    )
    dataset.save(out / DATASET_FILE)
    artifacts = [DATASET_FILE, "stats.json"]
    if args.attributes:
        attrs = load_attributes(args.attributes, args.attributes_format, dataset)
        attrs.save(out / ATTRIBUTES_FILE)
        artifacts.append(ATTRIBUTES_FILE)
    n_ratings = dataset.num_interactions()
    stats = {
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "num_ratings": n_ratings,
        "density_percent": 100.0 * dataset.density(),
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, argv, None, _sha256(out / DATASET_FILE), artifacts)
    print(f"ingested {n_ratings} positives: {dataset.num_users} users x "
          f"{dataset.num_items} items, density {stats['density_percent']:.4f}%")
    return 0


def _resolve_train_config(args) -> ModelConfig:
    if args.preset:
        config = preset_config(args.preset)
    else:
        config = ModelConfig()
    if args.config:
        base = config.to_dict()
        base.update(json.loads(Path(args.config).read_text()))
        config = ModelConfig.from_dict(base)
    for name in ("epochs", "seed", "lr"):
        val = getattr(args, name)
        if val is not None:
            setattr(config, name, val)
    return config.validate()


def cmd_train(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset_dir(args.dataset)
    config = _resolve_train_config(args)
    result = trainer.fit(dataset, config, workers=args.workers,
                         log_path=out / "training_log.csv")
    save_checkpoint(result.best_store, out / "best.ckpt")
    save_checkpoint(result.final_store, out / "final.ckpt")
    config.save(out / "config.json")
    _write_manifest(out, argv, config.to_dict(),
                    _sha256(Path(args.dataset) / DATASET_FILE),
                    ["best.ckpt", "final.ckpt", "training_log.csv", "config.json"])
    print(f"trained {config.epochs} epochs; best valid MRR "
          f"{result.best_valid_mrr:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_eval(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset_dir(args.dataset)
    store = load_checkpoint(args.checkpoint)
    config = ModelConfig(num_user_vectors=store.C, dim=store.d, variant=store.variant,
                         radius=store.r, eval_exclude=args.eval_exclude)
    cutoffs = _parse_cutoffs(args.cutoffs)
    report = evaluation.evaluate(store, dataset, args.split, config, cutoffs=cutoffs)
    if args.maxdiv is not None:
        md_cutoffs = _parse_cutoffs(args.maxdiv) if args.maxdiv else [3, 5, 10, 20]
        report.maxdiv = {
            n: evaluation.maxdiv(store, dataset, args.split, n,
                                 eval_exclude=args.eval_exclude)
            for n in md_cutoffs
        }
    if args.groups:
        attr_path = Path(args.dataset) / ATTRIBUTES_FILE
        if not attr_path.exists():
            raise ConfigError(
                f"--groups needs item attributes, but {attr_path} does not exist; "
                "re-run ingest with --attributes")
        attrs = AttributeTable.load(attr_path)
        report.per_group_map = evaluation.per_group_map(store, dataset, attrs,
                                                        args.split, config)
    report.save(out / "report.json", out / "report.csv")
    _write_manifest(out, argv, config.to_dict(),
                    _sha256(Path(args.dataset) / DATASET_FILE),
                    ["report.json", "report.csv"])
    parts = [f"p@{n}={report.precision[n]:.4f}" for n in cutoffs]
    parts += [f"ndcg@{n}={report.ndcg[n]:.4f}" for n in cutoffs]
    parts += [f"map={report.map:.4f}", f"mrr={report.mrr_first_hit:.4f}"]
    print(f"{args.split}: " + " ".join(parts))
    return 0


def cmd_stats(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset_dir(args.dataset)
    attr_path = Path(args.dataset) / ATTRIBUTES_FILE
    if not attr_path.exists():
        raise ConfigError(f"diversity statistics need item attributes, but "
                          f"{attr_path} does not exist; re-run ingest with --attributes")
    attrs = AttributeTable.load(attr_path)
    values = evaluation.diversity_values(dataset, attrs)
    edges, counts = evaluation.diversity_histogram(values, bins=args.bins)
    # two-column histogram: bin = left edge of each [edge, next) interval
    lines = ["bin,count"]
    lines += [f"{edges[i]!r},{int(counts[i])}" for i in range(len(counts))]
    (out / "div_histogram.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, argv, None, _sha256(Path(args.dataset) / DATASET_FILE),
                    ["div_histogram.csv"])
    in_band = float(((values > 0) & (values <= 0.8)).mean()) if len(values) else 0.0
    at_one = float((values == 1.0).mean()) if len(values) else 0.0
    print(f"diversity over {len(values)} users: mean={values.mean():.4f} "
          f"in(0,0.8]={100*in_band:.1f}% at1.0={100*at_one:.1f}%"
          if len(values) else "diversity: no users with >= 2 positives")
    return 0


def cmd_bound(args, argv) -> int:
    if args.dataset:
        dataset = _load_dataset_dir(args.dataset)
        inputs = evaluation.BoundInputs.from_dataset(dataset, args.dim, args.radius,
                                                     args.eta)
    else:
        if args.users is None or args.npos is None or args.nneg is None:
            raise ConfigError("bound needs either --dataset or all of "
                              "--users/--npos/--nneg")
        inputs = evaluation.BoundInputs(
            num_users=args.users,
            n_pos=np.full(args.users, args.npos, dtype=np.int64),
            n_neg=np.full(args.users, args.nneg, dtype=np.int64),
            dim=args.dim, radius=args.radius, dcrs_weight=args.eta)
    res = evaluation.generalization_bound(inputs)
    if res.vacuous:
        print(f"n_tilde={res.n_tilde!r} vacuous")
    else:
        print(f"n_tilde={res.n_tilde!r} epsilon={res.epsilon!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dpcml",
        description="Train and evaluate diversity-promoting collaborative "
                    "metric learning models on implicit feedback.")
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("ingest", help="parse ratings into a split dataset")
    pi.add_argument("--ratings", required=True)
    pi.add_argument("--format", required=True,
                    choices=["movielens-dcolon", "tsv", "csv"])
    pi.add_argument("--attributes")
    pi.add_argument("--attributes-format", default="movielens-genres",
                    choices=["movielens-genres", "tsv-multi"])
    pi.add_argument("--threshold", type=float, default=None,
                    help="keep rows with rating >= this (default 4.0 for "
                         "movielens-dcolon, none otherwise)")
    pi.add_argument("--min-interactions", type=int, default=5)
    pi.add_argument("--split", default="0.6,0.2,0.2")
    pi.add_argument("--seed", type=int, required=True)
    pi.add_argument("--keep-cold-items", action="store_true")
    pi.add_argument("--out", required=True)
    pi.set_defaults(func=cmd_ingest)

    pt = sub.add_parser("train", help="fit a model and write checkpoints")
    pt.add_argument("--dataset", required=True)
    pt.add_argument("--config")
    pt.add_argument("--preset", choices=sorted(PRESETS))
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--lr", type=float, default=None)
    pt.add_argument("--workers", type=int, default=1)
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    pe.add_argument("--dataset", required=True)
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--split", required=True, choices=["valid", "test"])
    pe.add_argument("--cutoffs", default="3,5")
    pe.add_argument("--groups", action="store_true")
    pe.add_argument("--maxdiv", nargs="?", const="", default=None,
                    help="also report MaxDiv (optionally at these cutoffs)")
    pe.add_argument("--eval-exclude", default="train+valid",
                    choices=["train", "train+valid"])
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_eval)

    ps = sub.add_parser("stats", help="preference-diversity histogram")
    ps.add_argument("--dataset", required=True)
    ps.add_argument("--bins", type=int, default=10)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_stats)

    pb = sub.add_parser("bound", help="evaluate the generalization bound")
    pb.add_argument("--dataset")
    pb.add_argument("--users", type=int)
    pb.add_argument("--npos", type=int)
    pb.add_argument("--nneg", type=int)
    pb.add_argument("--dim", type=int, required=True)
    pb.add_argument("--radius", type=float, default=1.0)
    pb.add_argument("--eta", type=float, default=10.0)
    pb.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except trainer.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError, EmptyDatasetError, CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
