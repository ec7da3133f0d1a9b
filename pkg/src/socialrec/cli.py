"""Command-line pipeline: prepare -> embed -> train -> evaluate -> ablate.

Every command takes ``--config`` (key = value lines, flags win), ``--seed``,
``--threads`` and ``--out``; the resolved options are echoed to
``<out>/run.json``.  Exit codes: 0 success, 1 runtime failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import matio
from . import model as M
from .dataset import (
    DataError,
    dataset_stats,
    filter_dataset,
    leave_one_out_split,
    load_interactions,
    read_split_manifest,
    write_dataset_tsvs,
    write_split_manifest,
)
from .deepwalk import train_social_embeddings
from .evaluation import evaluate, export_attention, rank_held_out, sparsity_bins
from .features import (
    EmbeddingBundle,
    load_bundle,
    save_bundle,
    style_vectors_from_layer_files,
    user_visual_profiles,
)
from .synthetic import SyntheticConfig, generate_synthetic, group_sizes
from .training import TrainConfig, TrainState, bpr_pretrain, fit, gradient_check


class UsageError(Exception):
    pass


def _read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(args, parser):
    """Config file fills in options the command line left at their default."""
    if not getattr(args, "config", None):
        return args
    values = _read_config_file(args.config)
    defaults = {a.dest: a.default for a in parser._actions}
    unknown = [k for k in values if k not in defaults]
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, raw in values.items():
        if getattr(args, key) != defaults[key]:
            continue  # explicit flag wins
        default = defaults[key]
        if isinstance(default, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(default, int):
            setattr(args, key, int(raw))
        elif isinstance(default, float):
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)
    return args


def _write_run_record(args, command):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "parser"):
            continue
        record[key] = value if not isinstance(value, Path) else str(value)
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_mode(args) -> M.AttentionMode:
    bottom, top = (args.mode.split(",") + ["att"])[:2] if "," in args.mode \
        else (args.mode, args.mode)
    aspects = () if args.aspects == "none" else tuple(
        a.strip() for a in args.aspects.split(",") if a.strip()
    )
    inputs = tuple(k.strip() for k in args.inputs.split(",") if k.strip())
    return M.AttentionMode(
        bottom=bottom.strip(), top=top.strip(), aspects=aspects, inputs=inputs,
        creator_input=args.creator_input,
    )


def _load_prepared(data_dir):
    data_dir = Path(data_dir)
    ds = load_interactions(
        data_dir / "ratings.tsv", data_dir / "social.tsv", data_dir / "uploads.tsv"
    )
    split = read_split_manifest(data_dir / "split.json", ds)
    return ds, split


def _train_config(args, mode) -> TrainConfig:
    return TrainConfig(
        latent=args.latent, hidden=args.hidden, reg=args.reg, lr=args.lr,
        batch=args.batch, negatives=args.negatives, epochs=args.epochs,
        patience=args.patience, seed=args.seed, mode=mode,
        warm_start=args.warm_start, warm_epochs=args.warm_epochs,
        eval_candidates=args.candidates,
    )


def cmd_prepare(args):
    ds = load_interactions(args.ratings, args.social, args.uploads)
    ds = filter_dataset(
        ds, args.min_user_ratings, args.min_user_links, args.min_item_ratings
    )
    split = leave_one_out_split(ds, args.validation_fraction, args.seed)
    out = Path(args.out)
    write_dataset_tsvs(ds, out)
    write_split_manifest(split, out / "split.json")
    stats = dataset_stats(ds)
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1)
        fh.write("\n")
    print("Users\tImages\tRatings\tSocial Links\tRating Density")
    print(
        f"{stats['users']}\t{stats['images']}\t{stats['ratings']}"
        f"\t{stats['social_links']}\t{stats['density'] * 100:.2f}%"
    )
    return 0


def cmd_embed(args):
    ds, split = _load_prepared(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "social":
        emb = train_social_embeddings(
            ds, dim=args.dim, walks_per_vertex=args.walks,
            walk_length=args.walk_length, window=args.window,
            negative_samples=args.negative, epochs=args.sg_epochs,
            lr=args.sg_lr, seed=args.seed, threads=args.threads,
        )
        matio.write_matrix(out / "social", emb, ds.user_ids)
        print(f"wrote social embeddings: {emb.shape[0]} x {emb.shape[1]}")
    elif args.what == "style":
        vectors = style_vectors_from_layer_files(args.maps_dir, ds.item_ids)
        matio.write_matrix(out / "style", vectors, ds.item_ids)
        print(f"wrote style vectors: {vectors.shape[0]} x {vectors.shape[1]}")
    elif args.what == "profiles":
        content, _, _ = matio.read_matrix(Path(args.embeddings) / "content")
        style, _, _ = matio.read_matrix(Path(args.embeddings) / "style")
        user_content, user_style = user_visual_profiles(split.train, content, style)
        matio.write_matrix(out / "user_content", user_content, ds.user_ids)
        matio.write_matrix(out / "user_style", user_style, ds.user_ids)
        print(f"wrote user profiles for {ds.num_users} users")
    return 0


def cmd_train(args):
    ds, split = _load_prepared(args.data)
    mode = _parse_mode(args)
    bundle = load_bundle(args.embeddings, ds).with_profiles_from(split.train)
    cfg = _train_config(args, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        header = {"type": "header", "mode": mode.to_dict(), "seed": cfg.seed,
                  "latent": cfg.latent, "hidden": cfg.hidden, "lr": cfg.lr,
                  "reg": cfg.reg, "batch": cfg.batch, "epochs": cfg.epochs}
        fh.write(json.dumps(header) + "\n")
        fh.flush()

        def sink(record):
            fh.write(json.dumps(record) + "\n")
            fh.flush()

        params, log = fit(split, bundle, cfg, log_sink=sink)
    M.save_checkpoint(params, out / "checkpoint", mode=mode, seed=cfg.seed,
                      metadata={"epochs_run": len(log)})
    print(f"trained {len(log)} epochs; checkpoint at {out / 'checkpoint'}")
    return 0


def cmd_evaluate(args):
    ds, split = _load_prepared(args.data)
    params, manifest = M.load_checkpoint(args.checkpoint)
    if (params.dims.num_users, params.dims.num_items) != (ds.num_users, ds.num_items):
        raise DataError(
            f"checkpoint geometry {params.dims.num_users}x{params.dims.num_items} "
            f"does not match dataset {ds.num_users}x{ds.num_items}"
        )
    mode = M.AttentionMode.from_dict(manifest["mode"]) if manifest.get("mode") \
        else M.AttentionMode()
    bundle = load_bundle(args.embeddings, ds).with_profiles_from(split.train)
    ks = tuple(int(k) for k in args.ks.split(","))
    users, ranks = rank_held_out(
        params, mode, split, bundle, n_candidates=args.candidates,
        repeats=args.repeats, seed=args.seed, threads=args.threads,
    )
    from .evaluation import aggregate_ranks

    report = aggregate_ranks(ranks, ks, args.repeats)
    payload = {"report": report.to_dict()}
    if args.bins:
        edges = [int(e) for e in args.bins.split(",")]
        bins = sparsity_bins(split, users, ranks, ks, edges, args.repeats)
        payload["bins"] = {
            label: {"population": entry["population"],
                    "report": entry["report"].to_dict()}
            for label, entry in bins.items()
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(payload["report"], sort_keys=True))
    return 0


ATTENTION_GRID = (
    ("avg", "avg"), ("max", "max"), ("avg", "att"), ("max", "att"),
    ("att", "avg"), ("att", "max"), ("att", "att"),
)
ASPECT_GRID = (("upload",), ("social",), ("creator",), ("upload", "social", "creator"))
INPUT_GRID = (
    ("base",),
    ("base", "aux"),
    ("base", "aux", "social_embed"),
    ("base", "aux", "visual_content"),
    ("base", "aux", "visual_style"),
    ("base", "aux", "visual_content", "visual_style"),
    ("base", "aux", "social_embed", "visual_content", "visual_style"),
)


def cmd_ablate(args):
    if not args.train_all:
        raise UsageError("ablate currently requires --train-all")
    ds, split = _load_prepared(args.data)
    bundle = load_bundle(args.embeddings, ds).with_profiles_from(split.train)
    dims = M.ModelDims(ds.num_users, ds.num_items, args.latent, args.hidden,
                       bundle.social_dim, bundle.content_dim, bundle.style_dim)
    base_cfg = _train_config(args, M.AttentionMode())
    warm = bpr_pretrain(split.train, dims, base_cfg.warm_epochs, base_cfg.seed, base_cfg)

    def run(mode):
        cfg = _train_config(args, mode)
        params, _ = fit(split, bundle, cfg, dims=dims, warm=warm)
        rep = evaluate(params, mode, split, bundle, ks=(5,),
                       n_candidates=args.candidates, repeats=args.repeats,
                       seed=args.seed, threads=args.threads)
        return rep.hr_mean[5], rep.ndcg_mean[5]

    bpr_params = M.init_params(dims, seed=base_cfg.seed, warm_start=warm)
    bpr_rep = evaluate(bpr_params, M.BPR_MODE, split, bundle, ks=(5,),
                       n_candidates=args.candidates, repeats=args.repeats,
                       seed=args.seed, threads=args.threads)
    baseline = (bpr_rep.hr_mean[5], bpr_rep.ndcg_mean[5])

    rows = [{"section": "baseline", "name": "BPR",
             "hr5": baseline[0], "ndcg5": baseline[1]}]
    for bottom, top in ATTENTION_GRID:
        hr, ndcg = run(M.AttentionMode(bottom=bottom, top=top))
        rows.append({"section": "attention", "name": f"{bottom.upper()}/{top.upper()}",
                     "hr5": hr, "ndcg5": ndcg})
    for aspects in ASPECT_GRID:
        hr, ndcg = run(M.AttentionMode(aspects=aspects))
        rows.append({"section": "aspects", "name": "+".join(a[0].upper() for a in aspects),
                     "hr5": hr, "ndcg5": ndcg})
    for inputs in INPUT_GRID:
        hr, ndcg = run(M.AttentionMode(inputs=inputs))
        rows.append({"section": "inputs", "name": "+".join(inputs),
                     "hr5": hr, "ndcg5": ndcg})

    def improvement(x, base):
        return 0.0 if base <= 0 else 100.0 * (x - base) / base

    for row in rows:
        row["hr5_gain_pct"] = improvement(row["hr5"], baseline[0])
        row["ndcg5_gain_pct"] = improvement(row["ndcg5"], baseline[1])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
    header = f"{'section':<10} {'variant':<38} {'HR@5':>8} {'NDCG@5':>8} {'dHR%':>8} {'dNDCG%':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['section']:<10} {row['name']:<38} {row['hr5']:>8.4f} "
              f"{row['ndcg5']:>8.4f} {row['hr5_gain_pct']:>8.2f} {row['ndcg5_gain_pct']:>8.2f}")
    return 0


def cmd_export_attention(args):
    ds, split = _load_prepared(args.data)
    params, manifest = M.load_checkpoint(args.checkpoint)
    mode = M.AttentionMode.from_dict(manifest["mode"]) if manifest.get("mode") \
        else M.AttentionMode()
    bundle = load_bundle(args.embeddings, ds).with_profiles_from(split.train)
    pairs = split.test if args.pairs == "test" else split.validation
    dump = export_attention(params, mode, split.train, bundle, pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "attention.tsv", "w", encoding="utf-8") as fh:
        fh.write(dump.to_tsv(ds))
    if dump.skipped:
        print(f"warning: {dump.skipped} users had no active aspects", file=sys.stderr)
    print(f"wrote attention weights for {len(dump.rows)} users")
    return 0


def cmd_synth(args):
    fractions = tuple(float(f) for f in args.fractions.split(","))
    cfg = SyntheticConfig(
        num_users=args.users, num_items=args.items, fractions=fractions,
        latent_dim=args.latent_dim, noise=args.noise, seed=args.seed,
        ratings_per_user=args.ratings_per_user,
        social_dim=args.social_dim, content_dim=args.content_dim,
        style_dim=args.style_dim,
    )
    ds, bundle, labels = generate_synthetic(cfg)
    out = Path(args.out)
    write_dataset_tsvs(ds, out)
    save_bundle(bundle, ds, out)
    with open(out / "groups.tsv", "w", encoding="utf-8") as fh:
        for u in range(ds.num_users):
            fh.write(f"{ds.user_ids[u]}\t{int(labels[u])}\n")
    sizes = group_sizes(cfg)
    print(f"wrote synthetic dataset: {ds.num_users} users, {ds.num_items} items, "
          f"{len(ds.ratings)} ratings; groups {sizes}")
    return 0


def cmd_gradcheck(args):
    cfg = SyntheticConfig(
        num_users=8, num_items=12, ratings_per_user=4, latent_dim=4,
        social_dim=6, content_dim=7, style_dim=9, follows_per_user=2,
        seed=args.seed,
    )
    ds, bundle, _ = generate_synthetic(cfg)
    dims = M.ModelDims(8, 12, latent=4, hidden=5, social=6, content=7, style=9)
    params = M.init_params(dims, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    pairs = [(int(rng.integers(8)), int(rng.integers(12))) for _ in range(4)]
    worst_overall = 0.0
    for bottom, top in ATTENTION_GRID:
        mode = M.AttentionMode(bottom=bottom, top=top)
        report = gradient_check(params, pairs, ds, bundle, mode, step=args.step)
        worst = max(report.values())
        worst_overall = max(worst_overall, worst)
        print(f"{bottom}/{top}: max relative error {worst:.3e}")
    print(f"overall max relative error {worst_overall:.3e}")
    return 0 if worst_overall < 1e-4 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="socialrec",
        description="Social-contextual image recommendation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default="out", help="output directory")

    def train_opts(p):
        p.add_argument("--latent", type=int, default=15)
        p.add_argument("--hidden", type=int, default=20)
        p.add_argument("--reg", type=float, default=0.01)
        p.add_argument("--lr", type=float, default=0.0005)
        p.add_argument("--batch", type=int, default=512)
        p.add_argument("--negatives", type=int, default=5)
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--patience", type=int, default=2)
        p.add_argument("--warm-start", action="store_true", default=True)
        p.add_argument("--no-warm-start", dest="warm_start", action="store_false")
        p.add_argument("--warm-epochs", type=int, default=20)
        p.add_argument("--candidates", type=int, default=100)

    def mode_opts(p):
        p.add_argument("--mode", default="att,att", help="bottom,top in att|avg|max")
        p.add_argument("--aspects", default="upload,social,creator",
                       help="comma list or 'none'")
        p.add_argument("--inputs",
                       default="base,aux,social_embed,visual_content,visual_style")
        p.add_argument("--creator-input", default="creator",
                       choices=("creator", "self"))

    p = sub.add_parser("prepare", help="filter raw TSVs and split")
    p.add_argument("--ratings", required=True)
    p.add_argument("--social", required=True)
    p.add_argument("--uploads", required=True)
    p.add_argument("--min-user-ratings", type=int, default=2)
    p.add_argument("--min-user-links", type=int, default=2)
    p.add_argument("--min-item-ratings", type=int, default=2)
    p.add_argument("--validation-fraction", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_prepare, parser=p)

    p = sub.add_parser("embed", help="produce embedding files")
    p.add_argument("what", choices=("social", "style", "profiles"))
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--maps-dir", default=None, help="per-layer feature map files")
    p.add_argument("--embeddings", default=None,
                   help="directory with content/style files (for profiles)")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--walks", type=int, default=80)
    p.add_argument("--walk-length", type=int, default=40)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--sg-epochs", type=int, default=5)
    p.add_argument("--sg-lr", type=float, default=0.025)
    common(p)
    p.set_defaults(func=cmd_embed, parser=p)

    p = sub.add_parser("train", help="fit the model")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    train_opts(p)
    mode_opts(p)
    common(p)
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("evaluate", help="sampled-candidate top-K evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ks", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--bins", default=None, help="comma bin edges on rating counts")
    common(p)
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser("ablate", help="attention/aspect/input ablation grids")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--train-all", action="store_true")
    p.add_argument("--repeats", type=int, default=3)
    train_opts(p)
    common(p)
    p.set_defaults(func=cmd_ablate, parser=p)

    p = sub.add_parser("export-attention", help="per-user aspect weights TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", default="test", choices=("test", "validation"))
    common(p)
    p.set_defaults(func=cmd_export_attention, parser=p)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--fractions", default="0.34,0.33,0.33")
    p.add_argument("--latent-dim", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--ratings-per-user", type=int, default=20)
    p.add_argument("--social-dim", type=int, default=32)
    p.add_argument("--content-dim", type=int, default=256)
    p.add_argument("--style-dim", type=int, default=320)
    common(p)
    p.set_defaults(func=cmd_synth, parser=p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--step", type=float, default=1e-5)
    common(p)
    p.set_defaults(func=cmd_gradcheck, parser=p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(args, args.parser)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        _write_run_record(args, args.command)
        return args.func(args)
    except (UsageError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
