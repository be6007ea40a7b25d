"""Command-line entry point.

Exit codes: 0 success, 1 stage failure, 2 configuration error. When
``--config FILE`` is given its values take precedence over command-line flags.
The compute device is read from ``DEEPVC_DEVICE``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import CheckpointVersionError, load_checkpoint, save_checkpoint
from .cluster import finetune, init_centroids
from .embed import plot_clusters
from .pipeline import (ConfigError, RunConfig, StageFailure, build_for_config, evaluate_latents, infer,
                       reconstruction_report, run_ablation, run_comparison, run_pipeline, save_sidecar,
                       sidecar_path, silhouette_sweep, tomllib)
from .preprocess import FuzzyFilterConfig, PreprocessFlags, preprocess_pipeline, standardize
from .vae import encode_mean, pretrain

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
PROVENANCE_NAME = "provenance.json"


def _merge(base: dict, over: dict) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for sec, vals in over.items():
        out.setdefault(sec, {}).update(vals)
    return out


def _config(args, flags: dict) -> RunConfig:
    """Flags first, then the config file on top."""
    d = flags
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                d = _merge(flags, tomllib.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    return RunConfig.from_dict(d)


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def _load_dir(path, side=None):
    """Directory dataset, resized to ``side`` when given, plus its pre-processing provenance."""
    ds = data_mod.load_directory(path)
    prov_file = Path(path) / PROVENANCE_NAME
    prov = json.loads(prov_file.read_text()) if prov_file.exists() else None
    if side is not None:
        ds = ds.replace(s.with_pixels(standardize(s.pixels, side)) for s in ds)
    return ds, prov


def _prov_meta(prov, side, cfg: RunConfig):
    if prov is not None:
        flags = dict(prov["flags"])
        fuzzy = prov["fuzzy"]
    else:
        flags = PreprocessFlags(fuzzy=False, sharpen=False, flip=False, side=side).to_dict()
        fuzzy = asdict(FuzzyFilterConfig())
    if side is not None:
        flags["side"] = side
    return {"config": cfg.to_dict(), "preprocess": flags, "fuzzy": fuzzy}


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default))
    return path


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# --------------------------------------------------------------------------- commands

def cmd_preprocess(args):
    flags = PreprocessFlags(fuzzy=not args.no_fuzzy, sharpen=not args.no_sharpen,
                            flip=args.flip, side=args.side)
    try:
        fz = FuzzyFilterConfig(window_side=args.window, sigma=args.sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ds = data_mod.load_directory(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = preprocess_pipeline(ds, fz, flags, train=args.flip)
    rows = []
    for s in done:
        fname = s.id.replace(":", "_").replace("/", "_") + ".png"
        data_mod.write_image(out / fname, s.pixels)
        rows.append((s.id, fname, "" if s.label is None else s.label))
    with open(out / data_mod.MANIFEST_NAME, "w") as fh:
        fh.write("id,filename,label\n")
        for r in rows:
            fh.write(",".join(str(x) for x in r) + "\n")
    _write_json(out / PROVENANCE_NAME, {"source": str(Path(args.data).resolve()), "flags": flags.to_dict(),
                                        "fuzzy": asdict(fz), "ids": [s.id for s in ds], "count": len(done)})
    print(f"wrote {len(done)} images to {out}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _config(args, {"vae": _drop_none({"epochs": args.epochs, "batch": args.batch, "lr": args.lr,
                                             "latent_dim": args.latent, "prior": args.prior}),
                         "cluster": _drop_none({"K": args.k}),
                         "run": {"seed": args.seed}, "data": {"source": "directory", "path": args.data}})
    ds, prov = _load_dir(cfg.data.path, args.side)
    x = ds.images()
    model = build_for_config(cfg, x.shape[-1])
    model, hist = pretrain(model, x, cfg.train_config("vae"),
                           on_epoch=lambda r: print(json.dumps(r), flush=True))
    save_checkpoint(args.out, model, epoch=len(hist), config_hash=cfg.config_hash(),
                    meta=_prov_meta(prov, x.shape[-1], cfg))
    print(f"saved {args.out}")
    return EXIT_OK


def cmd_finetune(args):
    ck = load_checkpoint(args.ckpt)
    flags = {"cluster": _drop_none({"K": args.k, "gamma": args.gamma, "batch": args.batch, "lr": args.lr,
                                    "epochs": args.epochs, "patience": args.patience}),
             "run": {"seed": args.seed}, "data": {"source": "directory", "path": args.data}}
    cfg = _config(args, _merge(ck.meta.get("config", {}), flags))
    ds, _ = _load_dir(cfg.data.path, ck.model.image_side)
    x = ds.images()
    model = ck.model
    centroids = init_centroids(encode_mean(model, x), cfg.cluster.K, cfg.run.seed)
    hist_path = Path(args.out).with_suffix(".history.jsonl")
    hist_path.parent.mkdir(parents=True, exist_ok=True)
    with open(hist_path, "w") as fh:
        model, centroids, hist = finetune(model, centroids, x, cfg.train_config("cluster"),
                                          labels=ds.labels() if ds.has_labels else None,
                                          on_epoch=lambda r: (fh.write(json.dumps(r) + "\n"),
                                                              print(json.dumps(r), flush=True)))
    meta = dict(ck.meta)
    meta["config"] = cfg.to_dict()
    save_checkpoint(args.out, model, centroids=centroids.mu, epoch=len(hist),
                    config_hash=cfg.config_hash(), meta=meta)
    print(f"saved {args.out}")
    return EXIT_OK


def _labelled(ds, manifest):
    if manifest is None:
        return ds.labels() if ds.has_labels else None
    by_id = {sid: lab for sid, _, lab in data_mod.read_manifest(manifest)}
    labs = [by_id.get(s.id) for s in ds]
    if any(l is None for l in labs):
        raise ConfigError("labels manifest does not cover every image")
    return np.array(labs)


def _eval_inputs(args):
    ck = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(ck.meta.get("config", {})) if ck.meta.get("config") else RunConfig()
    cfg = cfg.with_section("run", seed=args.seed if getattr(args, "seed", None) is not None else cfg.run.seed)
    if getattr(args, "config", None):
        cfg = _config(args, cfg.to_dict())
    ds, _ = _load_dir(args.data, ck.model.image_side)
    return ck, cfg, ds


def cmd_evaluate(args):
    ck, cfg, ds = _eval_inputs(args)
    truth = _labelled(ds, args.labels)
    x = ds.images()
    z = encode_mean(ck.model, x)
    snap, emb, umap, labels, _ = evaluate_latents(z, truth, cfg, ck.centroids)
    save_sidecar(sidecar_path(args.ckpt), umap, labels.labels, snap.get("mapping"))
    rec = reconstruction_report(ck.model, x, truth)
    bundle = dict(snap.get("metrics") or {})
    bundle.update({"ssim": rec["ssim"], "mse": rec["mse"]})
    run_id = hashlib.sha256((ck.config_hash + ",".join(ds.ids)).encode()).hexdigest()[:12]
    out = {"schema_version": 1, "config_hash": ck.config_hash, "run_id": run_id, "metrics": bundle,
           "C": snap["C"], "K": snap["K"], "C_K_mismatch": snap["C_K_mismatch"],
           "dec_metrics": snap.get("dec_metrics"), "reconstruction": rec,
           "silhouette_sweep": silhouette_sweep(z, seed=cfg.run.seed)}
    _write_json(args.out, out)
    print(json.dumps(bundle))
    return EXIT_OK


def cmd_visualize(args):
    ck, cfg, ds = _eval_inputs(args)
    truth = ds.labels() if ds.has_labels else None
    z = encode_mean(ck.model, ds.images())
    snap, emb, umap, labels, _ = evaluate_latents(z, truth, cfg, ck.centroids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pf = plot_clusters(emb, labels, out / "clusters", truth=truth)
    _write_json(out / "embedding.json", {"ids": ds.ids, "points": emb.points, "labels": labels.labels,
                                         "raw_labels": labels.raw_labels})
    print(f"wrote {pf.png} {pf.svg}")
    return EXIT_OK


def _report_exit(rep):
    print(json.dumps({"status": rep.status, "failed_stage": rep.failed_stage, "error": rep.error,
                      "report": rep.artifacts.get("report")}))
    return EXIT_OK if rep.ok else EXIT_FAILURE


def cmd_run(args):
    cfg = _config(args, {"run": _drop_none({"seed": args.seed, "out_dir": args.out})})
    return _report_exit(run_pipeline(cfg))


def cmd_ablate(args):
    cfg = _config(args, {"run": _drop_none({"seed": args.seed, "out_dir": args.out})})
    rows = run_ablation(cfg)
    for r in rows:
        print(f"PP={int(r['PP'])} PT={int(r['PT'])} ACC={r['ACC']}")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_FAILURE


def cmd_compare(args):
    cfg = _config(args, {"run": _drop_none({"seed": args.seed, "out_dir": args.out})})
    rows = run_comparison(cfg, [r.strip() for r in args.reducers.split(",") if r.strip()], checkpoint=args.ckpt)
    for r in rows:
        print(json.dumps({k: v for k, v in r.items() if k != "post_pretrain"}))
    return EXIT_OK


def cmd_infer(args):
    images = args.images if len(args.images) != 1 else args.images[0]
    results, summary = infer(args.ckpt, images, sidecar=args.sidecar)
    lines = [json.dumps({"id": r.id, "label": r.label, "class": r.cls, "x": r.coords[0], "y": r.coords[1],
                         "latency": r.latency}) for r in results]
    if args.out:
        Path(args.out).write_text("".join(l + "\n" for l in lines))
    for l in lines:
        print(l)
    print(json.dumps(summary))
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _sigma_arg(v):
    if v == "auto":
        return v
    try:
        return float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {v!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="deepvc", description="Deep variational clustering of grayscale images.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run config; its values override flags")
        sp.set_defaults(func=fn)
        return sp

    sp = add("preprocess", cmd_preprocess, "enhance and standardize a directory of images")
    sp.add_argument("--in", "--data", dest="data", required=True, help="input image directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=int, default=5, help="fuzzy filter window side (odd)")
    sp.add_argument("--sigma", type=_sigma_arg, default="auto", help="'auto' or a positive number")
    sp.add_argument("--side", type=int, default=224)
    sp.add_argument("--no-fuzzy", action="store_true")
    sp.add_argument("--no-sharpen", action="store_true")
    sp.add_argument("--flip", action="store_true", help="add mirrored copies (training sets)")

    sp = add("pretrain", cmd_pretrain, "pre-train the VAE")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--batch", type=int, default=128)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--latent", type=int, default=80)
    sp.add_argument("--k", type=int, default=None, help="mixture prior components (defaults to K)")
    sp.add_argument("--prior", choices=("gaussian_mixture", "standard_normal"), default=None)
    sp.add_argument("--side", type=int, default=None, help="resize inputs to this side first")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("finetune", cmd_finetune, "joint VAE + clustering fine-tuning")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.005)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--patience", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "score a checkpoint on labelled images")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--labels", default=None, help="manifest CSV with id,filename,label")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = add("visualize", cmd_visualize, "2-D cluster plots")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (("run", cmd_run, "full pipeline from a config"),
                            ("ablate", cmd_ablate, "pre-processing x pre-training grid")):
        sp = add(name, fn, help_)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)

    sp = add("compare", cmd_compare, "compare post-processing variants")
    sp.add_argument("--reducers", default="umap-hdbscan,tsne-hdbscan,pca-kmeans,kmeans-latent,hdbscan-direct")
    sp.add_argument("--ckpt", default=None, help="reuse a fine-tuned checkpoint")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = add("infer", cmd_infer, "per-frame labels and latency")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--images", nargs="*", default=[])
    sp.add_argument("--sidecar", default=None)
    sp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (FileNotFoundError, data_mod.DataFormatError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
