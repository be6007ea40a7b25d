"""Config-driven experiment runs: full pipeline, ablation grid, reducer
comparison and per-frame inference."""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch

from . import data as data_mod
from . import metrics
from .checkpoint import CheckpointVersionError, load_checkpoint, save_checkpoint
from .cluster import finetune, init_centroids, soft_assign
from .embed import (REDUCERS, UMAP, Embedding2D, apply_mapping, assign_labels, map_clusters_to_classes,
                    plot_clusters)
from .preprocess import FuzzyFilterConfig, PreprocessFlags, preprocess_image, preprocess_pipeline
from .training import TrainConfig
from .vae import PriorSpec, build_model, encode_mean, pretrain, reconstruct

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
WARMUP_FRAMES = 5
SILHOUETTE_KS = (2, 3, 4, 5, 6)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config

@dataclass(frozen=True)
class DataSection:
    source: str = "directory"  # directory | mnist | digits | synthetic
    path: Optional[str] = None
    manifest: Optional[str] = None
    subset_size: Optional[int] = None
    test_size: Optional[int] = None
    train_fraction: float = 0.9
    n_per_class: int = 50
    n_classes: int = 3
    synthetic_side: int = 32


@dataclass(frozen=True)
class PreprocessSection:
    fuzzy: bool = True
    sharpen: bool = True
    flip: bool = True
    side: Optional[int] = 224
    window_side: int = 5
    search_radius: int = 10
    max_matches: int = 16
    mean_tolerance: float = 0.05
    var_tolerance: float = 0.01
    sigma: object = "auto"

    def flags(self) -> PreprocessFlags:
        return PreprocessFlags(self.fuzzy, self.sharpen, self.flip, self.side)

    def fuzzy_config(self) -> FuzzyFilterConfig:
        return FuzzyFilterConfig(self.window_side, self.search_radius, self.max_matches,
                                 self.mean_tolerance, self.var_tolerance, self.sigma)


@dataclass(frozen=True)
class VaeSection:
    latent_dim: int = 80
    widths: tuple = (32, 64, 128, 256)
    prior: str = "gaussian_mixture"
    prior_scale: float = 3.0
    epochs: int = 200
    batch: int = 128
    lr: float = 0.01
    patience: int = 10
    min_rel_improvement: float = 1e-4
    optimizer: str = "adam"


@dataclass(frozen=True)
class ClusterSection:
    K: int = 3
    gamma: float = 0.1
    epochs: int = 200
    batch: int = 64
    lr: float = 0.005
    patience: int = 10
    min_rel_improvement: float = 1e-4
    optimizer: str = "adam"


@dataclass(frozen=True)
class EmbedSection:
    n_neighbors: int = 15
    min_dist: float = 0.1
    min_cluster_size: Optional[int] = None
    n_epochs: Optional[int] = None


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    name: str = "run"
    plots: bool = True


_SECTIONS = {"data": DataSection, "preprocess": PreprocessSection, "vae": VaeSection,
             "cluster": ClusterSection, "embed": EmbedSection, "run": RunSection}


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = DataSection()
    preprocess: PreprocessSection = PreprocessSection()
    vae: VaeSection = VaeSection()
    cluster: ClusterSection = ClusterSection()
    embed: EmbedSection = EmbedSection()
    run: RunSection = RunSection()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kw = {}
        for name, sec_cls in _SECTIONS.items():
            vals = dict(d.get(name, {}))
            allowed = {f.name for f in fields(sec_cls)}
            bad = set(vals) - allowed
            if bad:
                raise ConfigError(f"[{name}] has unknown key(s): {sorted(bad)}")
            if "widths" in vals:
                vals["widths"] = tuple(vals["widths"])
            kw[name] = sec_cls(**vals)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        except (tomllib.TOMLDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def canonical_json(self) -> str:
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k != "out_dir"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"), default=list)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_section(self, name: str, **kw) -> "RunConfig":
        return replace(self, **{name: replace(getattr(self, name), **kw)})

    def validate(self):
        d = self.data
        if d.source not in ("directory", "mnist", "digits", "synthetic"):
            raise ConfigError(f"unknown data source {d.source!r}")
        if d.source == "directory" and not d.path:
            raise ConfigError("[data] path is required for a directory source")
        if not 0 < d.train_fraction <= 1:
            raise ConfigError("[data] train_fraction must lie in (0, 1]")
        try:
            self.preprocess.fuzzy_config()
            self.train_config("vae")
            self.train_config("cluster")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.vae.prior not in ("gaussian_mixture", "standard_normal"):
            raise ConfigError(f"unknown prior {self.vae.prior!r}")
        if self.cluster.K < 1:
            raise ConfigError("[cluster] K must be >= 1")
        if self.vae.latent_dim < 2:
            raise ConfigError("[vae] latent_dim must be >= 2")

    def train_config(self, phase: str) -> TrainConfig:
        s = self.vae if phase == "vae" else self.cluster
        return TrainConfig(epochs_max=s.epochs, patience=s.patience, min_rel_improvement=s.min_rel_improvement,
                           batch=s.batch, lr=s.lr, gamma=self.cluster.gamma, K=self.cluster.K,
                           seed=self.run.seed, optimizer=s.optimizer)


# --------------------------------------------------------------------------- report

@dataclass
class RunReport:
    config_hash: str
    out_dir: str
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    post_pretrain: Optional[dict] = None
    post_finetune: Optional[dict] = None
    reconstruction: Optional[dict] = None
    silhouette_sweep: Optional[dict] = None
    artifacts: dict = field(default_factory=dict)
    # placeholders for figures only obtainable on the private ultrasound data
    unreproducible: dict = field(default_factory=lambda: {
        "reconstruction_by_quality_class": None,
        "silhouette_sweep_reference": None,
        "acc_vs_k_reference": None,
        "comparison_table_reference": None,
    })

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default))
        return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


class StageFailure(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Stages:
    def __init__(self, report: RunReport):
        self.report = report

    def __call__(self, name):
        stages = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, et, ev, tb):
                stages.report.timings[name] = time.perf_counter() - self_inner.t0
                if ev is not None and not isinstance(ev, StageFailure):
                    raise StageFailure(name, ev) from ev
                return False

        return _Ctx()


# --------------------------------------------------------------------------- data

def load_data(cfg: RunConfig):
    """Train/test datasets before pre-processing."""
    d, seed = cfg.data, cfg.run.seed
    if d.source == "mnist":
        root = d.path or os.environ.get("DEEPVC_MNIST_ROOT")
        if not root or not data_mod.mnist_available(root):
            raise FileNotFoundError(f"MNIST IDX files not found (path={root!r}; set [data] path or DEEPVC_MNIST_ROOT)")
        train = data_mod.load_mnist(root, d.subset_size, seed=seed, split="train")
        if d.test_size is not None:
            test = data_mod.load_mnist(root, d.test_size, seed=seed, split="test")
            return train, test
        return data_mod.split(train, data_mod.SplitSpec(d.train_fraction, seed))
    if d.source == "digits":
        full = data_mod.load_digits_dataset()
    elif d.source == "synthetic":
        full = data_mod.make_synthetic(d.n_per_class, d.synthetic_side, d.n_classes, seed=seed)
    else:
        full = data_mod.load_directory(d.path, d.manifest)
    if d.subset_size is not None:
        full = data_mod.subset(full, np.random.default_rng(seed).choice(full.ids, d.subset_size, replace=False))
    return data_mod.split(full, data_mod.SplitSpec(d.train_fraction, seed))


def build_for_config(cfg: RunConfig, side: int):
    """Seeded model for ``side`` x ``side`` images with the configured prior."""
    prior = (PriorSpec.mixture(cfg.cluster.K, cfg.vae.latent_dim, cfg.vae.prior_scale)
             if cfg.vae.prior == "gaussian_mixture" else PriorSpec.standard_normal())
    return build_model(side, cfg.vae.latent_dim, prior, seed=cfg.run.seed, widths=cfg.vae.widths,
                       pad_to_multiple=True)


# --------------------------------------------------------------------------- evaluation

def _bundle(truth, pred):
    if truth is None:
        return None
    return metrics.clustering_metrics(truth, pred).to_dict()


def evaluate_latents(latents, truth, cfg: RunConfig, centroids=None, out_dir: Optional[Path] = None,
                     tag: str = "eval", plots: bool = False):
    """Score a latent set through the 2-D embedding + density labels (and the DEC head if given)."""
    snap = {}
    emb, umap = _reduce(latents, cfg)
    labels = assign_labels(emb, cfg.embed.min_cluster_size)
    snap["C"] = labels.C
    snap["K"] = cfg.cluster.K
    snap["C_K_mismatch"] = labels.C != cfg.cluster.K
    snap["n_noise"] = labels.n_noise
    snap["metrics"] = _bundle(truth, labels.labels)
    if truth is not None and labels.C >= 2:
        snap["metrics"]["silhouette"] = metrics.silhouette(emb.points, labels.labels)
    if truth is not None:
        mapping, matched = map_clusters_to_classes(labels, truth)
        snap["mapping"] = {str(k): int(v) for k, v in mapping.items()}
    if centroids is not None:
        snap["dec_metrics"] = _bundle(truth, soft_assign(latents, centroids).argmax(1))
    artifacts = {}
    if out_dir is not None and plots:
        pf = plot_clusters(emb, labels, out_dir / f"clusters_{tag}", truth=truth)
        artifacts[f"plot_{tag}_png"] = str(pf.png)
        artifacts[f"plot_{tag}_svg"] = str(pf.svg)
    return snap, emb, umap, labels, artifacts


def _reduce(latents, cfg: RunConfig):
    n_neighbors = min(cfg.embed.n_neighbors, len(latents) - 1)
    umap = UMAP(n_neighbors=n_neighbors, min_dist=cfg.embed.min_dist, seed=cfg.run.seed,
                n_epochs=cfg.embed.n_epochs)
    return Embedding2D(umap.fit_transform(latents)), umap


def silhouette_sweep(latents, ks=SILHOUETTE_KS, seed=0):
    from sklearn.cluster import KMeans

    out = {}
    for k in ks:
        if k >= len(latents):
            break
        lab = KMeans(k, n_init=10, random_state=seed).fit_predict(latents)
        if len(np.unique(lab)) > 1:
            out[str(k)] = metrics.silhouette(latents, lab)
    return out


def reconstruction_report(model, images, truth=None):
    x = np.asarray(images, dtype=np.float64)
    xh = reconstruct(model, x)
    if min(x.shape[1:]) < 11:
        ss = None
    else:
        ss = np.array([metrics.ssim(a, b) for a, b in zip(x, xh)])
    ms = np.array([metrics.mse(a, b) for a, b in zip(x, xh)])
    rep = {"ssim": None if ss is None else float(ss.mean()), "mse": float(ms.mean()), "by_class": {}}
    if truth is not None:
        for c in np.unique(truth):
            sel = truth == c
            rep["by_class"][str(int(c))] = {"ssim": None if ss is None else float(ss[sel].mean()),
                                            "mse": float(ms[sel].mean())}
    return rep


# --------------------------------------------------------------------------- pipeline

def _write_jsonl(path: Path, rows):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, default=_json_default) + "\n")


def run_pipeline(cfg: RunConfig, out_dir=None) -> RunReport:
    """preprocess -> pretrain -> finetune -> embed -> evaluate, writing all artifacts to ``out_dir``."""
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.run.seed)
    report = RunReport(cfg.config_hash(), str(out))
    stage = _Stages(report)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=list))
    report.artifacts["config"] = str(out / "config.json")
    try:
        with stage("data"):
            train_raw, test_raw = load_data(cfg)
            if len(train_raw) == 0 or len(test_raw) == 0:
                raise ValueError("train and test sets must both be non-empty")
        with stage("preprocess"):
            flags, fz = cfg.preprocess.flags(), cfg.preprocess.fuzzy_config()
            train = preprocess_pipeline(train_raw, fz, flags, train=True)
            test = preprocess_pipeline(test_raw, fz, flags, train=False)
            x_train, x_test = train.images(), test.images()
            y_train = train.labels() if train.has_labels else None
            y_test = test.labels() if test.has_labels else None
        meta = {"config": cfg.to_dict(), "preprocess": flags.to_dict(), "fuzzy": asdict(fz)}
        with stage("pretrain"):
            model = build_for_config(cfg, x_train.shape[-1])
            model, hist = pretrain(model, x_train, cfg.train_config("vae"))
            report.histories["pretrain"] = hist
            _write_jsonl(out / "pretrain_history.jsonl", hist)
            report.artifacts["pretrain_history"] = str(out / "pretrain_history.jsonl")
            ckpt = save_checkpoint(out / "pretrained.uqc", model, epoch=len(hist),
                                   config_hash=report.config_hash, meta=meta)
            report.artifacts["checkpoint_pretrained"] = str(ckpt)
        with stage("evaluate_pretrain"):
            z_train = encode_mean(model, x_train)
            centroids = init_centroids(z_train, cfg.cluster.K, cfg.run.seed)
            z_test = encode_mean(model, x_test)
            snap, *_ , arts = evaluate_latents(z_test, y_test, cfg, centroids.mu, out, "pretrain",
                                               plots=cfg.run.plots)
            report.post_pretrain = snap
            report.artifacts.update(arts)
        with stage("finetune"):
            model, centroids, hist = finetune(model, centroids, x_train, cfg.train_config("cluster"),
                                              labels=y_train)
            report.histories["finetune"] = hist
            _write_jsonl(out / "finetune_history.jsonl", hist)
            report.artifacts["finetune_history"] = str(out / "finetune_history.jsonl")
            ckpt = save_checkpoint(out / "final.uqc", model, centroids=centroids.mu,
                                   epoch=len(hist), config_hash=report.config_hash, meta=meta)
            report.artifacts["checkpoint_final"] = str(ckpt)
        with stage("embed"):
            z_test = encode_mean(model, x_test)
            snap, emb, umap, labels, arts = evaluate_latents(z_test, y_test, cfg, centroids.mu, out,
                                                             "final", plots=cfg.run.plots)
            report.post_finetune = snap
            report.artifacts.update(arts)
            sidecar = save_sidecar(sidecar_path(ckpt), umap, labels.labels, snap.get("mapping"))
            report.artifacts["inference_sidecar"] = str(sidecar)
            (out / "embedding.json").write_text(json.dumps(
                {"ids": test.ids, "points": emb.points.tolist(), "labels": labels.labels.tolist(),
                 "raw_labels": labels.raw_labels.tolist()}))
            report.artifacts["embedding"] = str(out / "embedding.json")
        with stage("evaluate"):
            report.reconstruction = reconstruction_report(model, x_test, y_test)
            report.silhouette_sweep = silhouette_sweep(z_test, seed=cfg.run.seed)
        report.status = "ok"
    except StageFailure as exc:
        report.status = "failed"
        report.failed_stage = exc.stage
        report.error = f"{type(exc.cause).__name__}: {exc.cause}"
        report.histories.setdefault("traceback", traceback.format_exception(type(exc.cause), exc.cause,
                                                                            exc.cause.__traceback__))
    report_path = out / "report.json"
    report.artifacts["report"] = str(report_path)
    missing = [k for k, p in report.artifacts.items() if k != "report" and not Path(p).exists()]
    if missing:
        raise RuntimeError(f"report references missing artifacts: {missing}")
    report.write(report_path)
    return report


def run_ablation(base: RunConfig, out_dir=None) -> List[dict]:
    """2x2 grid over pre-processing (PP) and VAE pre-training (PT)."""
    out = Path(out_dir or base.run.out_dir)
    rows = []
    for pp in (True, False):
        for pt in (True, False):
            cfg = base
            if not pp:
                cfg = cfg.with_section("preprocess", fuzzy=False, sharpen=False, flip=False)
            if not pt:
                cfg = cfg.with_section("vae", epochs=0)
            rep = run_pipeline(cfg, out / f"pp{int(pp)}_pt{int(pt)}")
            m = (rep.post_finetune or {}).get("metrics") or {}
            rows.append({"PP": pp, "PT": pt, "status": rep.status, "ACC": m.get("acc"), "NMI": m.get("nmi"),
                         "ARI": m.get("ari"), "AMI": m.get("ami"), "report": rep.artifacts["report"]})
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    return rows


def run_comparison(base: RunConfig, reducers: Sequence[str], out_dir=None, checkpoint=None) -> List[dict]:
    """Score several post-processing variants on the same fine-tuned checkpoint."""
    unknown = [r for r in reducers if r not in REDUCERS]
    if unknown:
        raise ConfigError(f"unknown reducer(s) {unknown}; choose from {sorted(REDUCERS)}")
    out = Path(out_dir or base.run.out_dir)
    pre = None
    if checkpoint is None:
        rep = run_pipeline(base, out / "base")
        if not rep.ok:
            raise StageFailure(rep.failed_stage, rep.error)
        checkpoint = rep.artifacts["checkpoint_final"]
        pre = rep.post_pretrain
    ck = load_checkpoint(checkpoint)
    _, test_raw = load_data(base)
    test = preprocess_pipeline(test_raw, base.preprocess.fuzzy_config(), base.preprocess.flags(), train=False)
    z = encode_mean(ck.model, test.images())
    truth = test.labels() if test.has_labels else None
    rows = []
    for name in reducers:
        t0 = time.perf_counter()
        labels, _ = REDUCERS[name](z, base.cluster.K, base.run.seed, n_neighbors=base.embed.n_neighbors,
                                   min_dist=base.embed.min_dist, min_cluster_size=base.embed.min_cluster_size)
        row = {"reducer": name, "C": int(len(np.unique(labels))), "seconds": time.perf_counter() - t0,
               "post_pretrain": pre}
        row.update({k.upper(): v for k, v in (_bundle(truth, labels) or {}).items() if v is not None})
        rows.append(row)
    (out / "comparison.json").write_text(json.dumps(rows, indent=2, default=_json_default))
    return rows


# --------------------------------------------------------------------------- inference

def sidecar_path(ckpt_path) -> Path:
    """Frozen embedding + labels used for inference live next to the checkpoint."""
    ckpt_path = Path(ckpt_path)
    return ckpt_path.with_name(ckpt_path.stem + ".inference.npz")


def save_sidecar(path, umap: UMAP, labels, mapping=None) -> Path:
    path = Path(path)
    base = path.with_suffix("")
    umap.save(base.with_name(base.name + "_umap.npz"))
    # labels are stored in the embedding's canonical row order
    np.savez(path, labels=np.asarray(labels, dtype=np.int64)[umap.order_],
             mapping=np.asarray(json.dumps(mapping or {})), umap=np.asarray(base.name + "_umap.npz"))
    return path


def load_sidecar(path):
    path = Path(path)
    with np.load(path) as f:
        labels = f["labels"]
        mapping = {int(k): int(v) for k, v in json.loads(f["mapping"].item()).items()}
        umap_name = f["umap"].item()
    umap = UMAP.load(path.with_name(umap_name))
    return umap, labels, mapping


@dataclass
class FrameResult:
    id: str
    label: int
    cls: Optional[int]
    coords: tuple
    latency: float


class InferenceSession:
    """Frozen checkpoint + embedding for per-frame scoring."""

    def __init__(self, ckpt_path, sidecar=None):
        ckpt_path = Path(ckpt_path)
        self.ckpt = load_checkpoint(ckpt_path)
        meta = self.ckpt.meta
        if "preprocess" not in meta:
            raise CheckpointVersionError(f"{ckpt_path}: checkpoint lacks pre-processing metadata")
        self.flags = PreprocessFlags(**meta["preprocess"])
        fz = dict(meta["fuzzy"])
        self.fuzzy = FuzzyFilterConfig(**fz)
        sidecar = Path(sidecar) if sidecar else sidecar_path(ckpt_path)
        if not sidecar.exists():
            raise CheckpointVersionError(f"no inference sidecar at {sidecar}")
        self.umap, self.labels, self.mapping = load_sidecar(sidecar)
        self.model = self.ckpt.model.eval()

    def _check(self, x):
        side = self.model.image_side
        if x.shape != (side, side):
            raise CheckpointVersionError(f"checkpoint expects {side}x{side} frames after pre-processing, got {x.shape}")

    def score(self, image, frame_id="frame") -> FrameResult:
        t0 = time.perf_counter()
        x = preprocess_image(image, self.flags, self.fuzzy)
        self._check(x)
        z = encode_mean(self.model, x[None].astype(np.float32))
        pt = self.umap.transform(z)[0]
        d = ((self.umap._emb - pt) ** 2).sum(1)
        # fitted embedding is stored in canonical row order; labels are in input order
        label = int(self.labels[int(d.argmin())])
        lat = time.perf_counter() - t0
        return FrameResult(frame_id, label, self.mapping.get(label), (float(pt[0]), float(pt[1])), lat)


def _iter_frames(images):
    if images is None:
        return
    if isinstance(images, (str, Path)):
        p = Path(images)
        if p.is_dir():
            files = sorted(f for f in p.iterdir() if f.suffix.lower() in data_mod.IMAGE_SUFFIXES)
        else:
            files = [p]
        for f in files:
            yield f.stem, data_mod.read_image(f)
        return
    for i, item in enumerate(images):
        if isinstance(item, (str, Path)):
            yield Path(item).stem, data_mod.read_image(item)
        elif isinstance(item, data_mod.ImageSample):
            yield item.id, item.pixels
        else:
            yield f"frame-{i:05d}", np.asarray(item)


def infer(ckpt_path, images, sidecar=None):
    """Score each frame; returns ``(results, summary)`` with per-frame and steady-state latency."""
    session = InferenceSession(ckpt_path, sidecar)
    results = [session.score(img, fid) for fid, img in _iter_frames(images)]
    lat = np.array([r.latency for r in results])
    steady = lat[WARMUP_FRAMES:] if len(lat) > WARMUP_FRAMES else lat
    summary = {"frames": len(results), "mean_latency": float(lat.mean()) if len(lat) else None,
               "steady_state_latency": float(steady.mean()) if len(steady) else None,
               "warmup_frames": min(WARMUP_FRAMES, len(lat))}
    return results, summary
