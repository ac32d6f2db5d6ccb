"""Command-line entry point: ``reco <command> [flags]``.

Reports go to JSON files and figures under ``--out``; a tab-delimited summary is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig, load_config, parse_overrides, save_config
from .errors import ConfigError, RecoError

log = logging.getLogger("reco")


def _emit(rows: dict) -> None:
    for key, value in rows.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}\t{value}")


def _train_config(args) -> TrainConfig:
    overrides = parse_overrides(args.override or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _eval_setup(args):
    """Checkpoint config with eval-time overrides applied; validates overrides before any work."""
    from .evaluation import load_encoder

    overrides = parse_overrides(args.override or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    model, cfg, aug = load_encoder(args.checkpoint)
    if overrides:
        cfg = cfg.replace(**overrides)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "effective_config.yaml")
    return model, cfg, aug, out


def _embed_split(model, cfg, aug, split, backbone=False):
    from .datapipe import load_dataset
    from .evaluation import embed_images

    ds = load_dataset(cfg.dataset, split, cfg.image_size)
    return embed_images(model, ds.images, aug, backbone, cfg.eval_batch_size), ds


# --------------------------------------------------------------------------- commands


def cmd_pretrain(args) -> int:
    from .plotting import plot_loss_curves
    from .trainer import pretrain, read_metrics

    cfg = _train_config(args)
    out = Path(args.out)
    final = pretrain(cfg, out, resume=args.resume, check_invariants=args.check_invariants)
    records = read_metrics(out / "metrics.jsonl")
    if records:
        plot_loss_curves(records, out / "loss_curves.png", smooth=args.smooth)
        last = records[-1]
        _emit({"checkpoint": final.with_suffix(""), "step": last.step, "csl": last.csl, "global": last.global_,
               "local": last.local, "total": last.total})
    return 0


def cmd_eval_knn(args) -> int:
    from .evaluation import accuracy_report, checkpoint_hash, knn_classify, write_report
    from .plotting import plot_per_class_accuracy

    model, cfg, aug, out = _eval_setup(args)
    k = args.k if args.k is not None else cfg.knn_k
    train_emb, train_ds = _embed_split(model, cfg, aug, "train")
    test_emb, test_ds = _embed_split(model, cfg, aug, args.split)
    res = knn_classify(train_emb, train_ds.labels, test_emb, test_ds.labels, k, cfg.knn_temperature)
    report = accuracy_report("knn", k, res.top1, res.top5, len(train_ds), len(test_ds), checkpoint_hash(args.checkpoint))
    write_report(out / f"knn_k{k}_{args.split}.json", report)
    plot_per_class_accuracy(res.predictions, test_ds.labels, out / f"knn_k{k}_{args.split}.png",
                            f"{k}-NN on {args.split}", test_ds.classes)
    _emit({"protocol": "knn", "k": k, "split": args.split, "top1": res.top1, "top5": res.top5})
    return 0


def cmd_eval_linear(args) -> int:
    from .evaluation import ProbeConfig, accuracy_report, checkpoint_hash, linear_probe, write_report

    model, cfg, aug, out = _eval_setup(args)
    train_feat, train_ds = _embed_split(model, cfg, aug, "train", backbone=True)
    test_feat, test_ds = _embed_split(model, cfg, aug, args.split, backbone=True)
    res = linear_probe(train_feat, train_ds.labels, test_feat, test_ds.labels, ProbeConfig.from_train_config(cfg))
    report = accuracy_report("linear", None, res["top1"], res["top5"], len(train_ds), len(test_ds), checkpoint_hash(args.checkpoint))
    report["train_top1"] = res["train_top1"]
    write_report(out / f"linear_{args.split}.json", report)
    _emit({"protocol": "linear", "split": args.split, "top1": res["top1"], "top5": res["top5"], "train_top1": res["train_top1"]})
    return 0


def cmd_eval_similarity(args) -> int:
    from .evaluation import checkpoint_hash, class_similarity, similarity_report, write_report
    from .plotting import plot_similarity_histogram

    model, cfg, aug, out = _eval_setup(args)
    emb, ds = _embed_split(model, cfg, aug, args.split)
    rep = class_similarity(emb, ds.labels)
    write_report(out / f"similarity_{args.split}.json", similarity_report(rep, checkpoint_hash(args.checkpoint)))
    plot_similarity_histogram(emb.numpy(), ds.labels.numpy(), out / f"similarity_{args.split}.png")
    _emit({"split": args.split, **rep.scaled(), "n_samples": rep.n_samples})
    return 0


def cmd_export(args) -> int:
    from .evaluation import export_embeddings

    model, cfg, aug, out = _eval_setup(args)
    emb, ds = _embed_split(model, cfg, aug, args.split, backbone=args.backbone)
    path = export_embeddings(emb, ds.labels, out / f"embeddings_{args.split}.bin")
    _emit({"file": path, "count": emb.shape[0], "dim": emb.shape[1]})
    return 0


def cmd_smoke(args) -> int:
    from .datapipe import load_dataset
    from .evaluation import extract_embeddings, knn_classify
    from .plotting import plot_loss_curves
    from .trainer import pretrain, read_metrics

    cfg = _train_config(args)
    out = Path(args.out)
    final = pretrain(cfg, out, check_invariants=True)
    records = read_metrics(out / "metrics.jsonl")
    plot_loss_curves(records, out / "loss_curves.png")
    train = load_dataset(cfg.dataset, "train", cfg.image_size).subset(cfg.subset_size, cfg.seed)
    train_emb, _ = extract_embeddings(final, dataset=train)
    test_emb, test_labels = extract_embeddings(final, "test")
    k = min(cfg.knn_k, len(train))
    knn = knn_classify(train_emb, train.labels, test_emb, test_labels, k, cfg.knn_temperature)
    first = sum(r.total for r in records[:10]) / min(10, len(records))
    _emit({"steps": records[-1].step, "total_first10": first, "total_last": records[-1].total,
           "knn_k": k, "knn_top1": knn.top1, "invariants": "ok"})
    return 0


def cmd_bench(args) -> int:
    from .bench import ARMS, DEFAULT_SEEDS, summary_rows, sweep
    from .plotting import plot_arm_comparison

    overrides = parse_overrides(args.override or [])
    arms = args.arms.split(",") if args.arms else list(ARMS)
    unknown = [a for a in arms if a not in ARMS]
    if unknown:
        raise ConfigError(f"unknown arm(s) {unknown}; choose from {list(ARMS)}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(DEFAULT_SEEDS)
    out = Path(args.out)
    results = sweep(args.config or "digits", arms, seeds, cache_dir=args.cache or out / "cache", overrides=overrides)
    rows = summary_rows(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    plot_arm_comparison(rows, out / "bench.png", metrics=("knn_top1", "phi", "s_intra"))
    cols = ["arm", "seeds", "knn_top1", "knn_top5", "s_intra", "s_inter", "phi"]
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reco", description="Relation-aware contrastive pre-training and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_default=None):
        p.add_argument("--config", default=config_default, help="YAML file or preset name")
        p.add_argument("--override", nargs="+", metavar="K=V", help="config overrides")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("pretrain", help="train an encoder"))
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint stem to resume from")
    p.add_argument("--check-invariants", action="store_true")
    p.add_argument("--smooth", type=int, default=1, help="moving-average window for the loss figure")
    p.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (
        ("eval-knn", cmd_eval_knn, "weighted kNN on frozen embeddings"),
        ("eval-linear", cmd_eval_linear, "linear probe on frozen backbone features"),
        ("eval-similarity", cmd_eval_similarity, "intra/inter-class similarity statistics"),
        ("export-embeddings", cmd_export, "write embeddings to a binary file"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "test"), default="test")
        p.add_argument("--out")
        p.add_argument("--override", nargs="+", metavar="K=V")
        p.add_argument("--seed", type=int)
        if name == "eval-knn":
            p.add_argument("--k", type=int)
        if name == "export-embeddings":
            p.add_argument("--backbone", action="store_true", help="export backbone features instead")
        p.set_defaults(func=func)

    p = common(sub.add_parser("smoke-test", help="short run with invariant checks"), config_default="smoke")
    p.add_argument("--out", default="smoke_run")
    p.set_defaults(func=cmd_smoke)

    p = common(sub.add_parser("bench", help="multi-seed comparison of loss configurations"), config_default="digits")
    p.add_argument("--arms", help="comma-separated arm names")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--cache", help="result cache directory (default OUT/cache)")
    p.add_argument("--out", default="bench_results")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RecoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
