"""Acceptance criteria, each run at its stated tolerance.

Every test prints one PASS/FAIL line through ``record_criterion``; the lines are
collected into a summary section at the end of the pytest run.
"""
import json
import os
import time

import numpy as np
import pytest

import test_cluster
import test_embed
import test_metrics
import test_vae
from deepvc import data as data_mod
from deepvc.cluster import clustering_loss, soft_assign, target_distribution
from deepvc.embed import apply_mapping, assign_labels, map_clusters_to_classes, reduce
from deepvc.metrics import acc, ami, ari, nmi
from deepvc.pipeline import RunConfig, infer, run_ablation, run_pipeline
from deepvc.preprocess import SHARPEN_KERNEL, FuzzyFilterConfig, estimate_noise_sigma, fuzzy_filter, sharpen
from oracles import acc_brute, ami_brute, ari_brute, fuzzy_filter_brute, nmi_brute

MNIST_SEEDS = (0, 1, 2)


# ---------------------------------------------------------------- MNIST runs (criteria 1-3)

def mnist_root():
    root = os.environ.get("DEEPVC_MNIST_ROOT")
    return root if root and data_mod.mnist_available(root) else None


def mnist_config(seed):
    return RunConfig.from_dict({
        "data": {"source": "mnist", "path": mnist_root(), "subset_size": 10000, "test_size": 1000},
        # digit images get no enhancement, only the model's own 28 -> 32 padding
        "preprocess": {"fuzzy": False, "sharpen": False, "flip": False, "side": None},
        "cluster": {"K": 10},
        "run": {"seed": seed, "plots": False},
    })


def require_mnist(record_criterion, number, title):
    if mnist_root() is None:
        record_criterion(number, title, False, "MNIST IDX files not found; set DEEPVC_MNIST_ROOT")
        pytest.fail("MNIST IDX files not found (set DEEPVC_MNIST_ROOT)")


@pytest.fixture(scope="module")
def mnist_reports(tmp_path_factory):
    cache = {}

    def get(seed):
        if seed not in cache:
            cache[seed] = run_pipeline(mnist_config(seed), tmp_path_factory.mktemp(f"mnist{seed}"))
        return cache[seed]

    return get


def test_criterion_01_mnist_scaled_reproduction(record_criterion, mnist_reports):
    title = "MNIST 10k/1k, K=10: ACC >= 0.70 and NMI >= 0.70"
    require_mnist(record_criterion, 1, title)
    t0 = time.perf_counter()
    rep = mnist_reports(0)
    assert rep.ok, rep.error
    m = rep.post_finetune["metrics"]
    passed = m["acc"] >= 0.70 and m["nmi"] >= 0.70
    record_criterion(1, title, passed, f"ACC={m['acc']:.4f} NMI={m['nmi']:.4f} in {time.perf_counter() - t0:.0f}s")
    assert passed


def test_criterion_02_finetune_improves_all_metrics(record_criterion, mnist_reports):
    title = "post-finetune ARI, AMI, NMI, ACC > post-pretrain, 3/3 seeds"
    require_mnist(record_criterion, 2, title)
    wins, details = 0, []
    for seed in MNIST_SEEDS:
        rep = mnist_reports(seed)
        assert rep.ok, rep.error
        pre, post = rep.post_pretrain["metrics"], rep.post_finetune["metrics"]
        ok = all(post[k] > pre[k] for k in ("ari", "ami", "nmi", "acc"))
        wins += ok
        details.append(f"seed {seed}: " + " ".join(f"{k} {pre[k]:.3f}->{post[k]:.3f}" for k in ("ari", "ami", "nmi", "acc")))
    record_criterion(2, title, wins == len(MNIST_SEEDS), f"{wins}/{len(MNIST_SEEDS)}; " + "; ".join(details))
    assert wins == len(MNIST_SEEDS)


def test_criterion_03_pretraining_ablation(record_criterion, tmp_path):
    title = "ACC(PT on) - ACC(PT off) >= 0.05 on MNIST, 3 seeds"
    require_mnist(record_criterion, 3, title)
    gaps = []
    for seed in MNIST_SEEDS:
        rows = run_ablation(mnist_config(seed), tmp_path / f"abl{seed}")
        by = {(r["PP"], r["PT"]): r["ACC"] for r in rows}
        gaps.append(by[False, True] - by[False, False])
    passed = min(gaps) >= 0.05
    record_criterion(3, title, passed, "gaps " + ", ".join(f"{g:.3f}" for g in gaps))
    assert passed


# ---------------------------------------------------------------- criterion 4

def test_criterion_04_unreproducible_slots_in_report(record_criterion, tmp_path):
    cfg = RunConfig.from_dict({
        "data": {"source": "synthetic", "n_per_class": 20, "synthetic_side": 16},
        "preprocess": {"fuzzy": False, "sharpen": False, "flip": False, "side": 16},
        "vae": {"latent_dim": 8, "widths": [4, 4, 8, 8], "epochs": 0},
        "cluster": {"epochs": 0}, "embed": {"n_neighbors": 8}, "run": {"plots": False},
    })
    rep = run_pipeline(cfg, tmp_path)
    d = json.loads((tmp_path / "report.json").read_text())
    slots = {"reconstruction_by_quality_class", "silhouette_sweep_reference", "acc_vs_k_reference",
             "comparison_table_reference"}
    passed = rep.ok and set(d["unreproducible"]) == slots and all(v is None for v in d["unreproducible"].values())
    record_criterion(4, "private-data figures recorded as unreproducible slots in report.json", passed,
                     ", ".join(sorted(d["unreproducible"])))
    assert passed


# ---------------------------------------------------------------- criterion 5

def test_criterion_05_metric_oracles(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    n = 0
    for a, b in test_metrics.random_instances(200):
        assert len(a) <= 12 and max(len(set(a)), len(set(b))) <= 4
        worst = max(worst, abs(ari(a, b) - ari_brute(a, b)), abs(nmi(a, b) - nmi_brute(a, b)),
                    abs(ami(a, b) - ami_brute(a, b)), abs(acc(a, b) - acc_brute(a, b)))
        n += 1
    dt = time.perf_counter() - t0
    passed = n == 200 and worst <= 1e-9 and dt < 10.0
    record_criterion(5, "ari/nmi/ami/acc vs brute force, 200 instances, <= 1e-9, < 10 s", passed,
                     f"max err {worst:.2e}, {dt:.2f}s")
    assert passed


# ---------------------------------------------------------------- criterion 6

def test_criterion_06_gradient_checks(record_criterion):
    t0 = time.perf_counter()
    e_vae = test_vae.vae_gradient_error()
    e_clu = test_cluster.clustering_gradient_error()
    dt = time.perf_counter() - t0
    passed = e_vae <= 1e-3 and e_clu <= 1e-3 and dt < 60.0
    record_criterion(6, "vae_loss and gamma*clustering_loss vs central differences, <= 1e-3, < 60 s", passed,
                     f"vae {e_vae:.2e}, clustering {e_clu:.2e}, {dt:.1f}s")
    assert passed


# ---------------------------------------------------------------- criterion 7

def test_criterion_07_dec_math(record_criterion):
    checks = {}
    yp = soft_assign([[0.0]], [[0.0], [1.0]])
    checks["soft_assign"] = float(np.max(np.abs(yp - [[2 / 3, 1 / 3]])))
    yt = target_distribution([[0.8, 0.2], [0.6, 0.4]])
    checks["target"] = float(np.max(np.abs(yt - [[0.8727, 0.1273], [0.4908, 0.5092]])))

    rng = np.random.default_rng(0)
    row_err = 0.0
    for _ in range(100):
        p = soft_assign(rng.normal(size=(20, 5)) * 3, rng.normal(size=(4, 5)))
        row_err = max(row_err, np.abs(p.sum(1) - 1).max(), np.abs(target_distribution(p).sum(1) - 1).max())
    kl_min = min(clustering_loss(test_cluster.row_stochastic(rng, 4, 3), test_cluster.row_stochastic(rng, 4, 3, 1e-6))
                 for _ in range(1000))

    passed = checks["soft_assign"] <= 1e-4 and checks["target"] <= 1e-4 and row_err <= 1e-9 and kl_min >= 0
    record_criterion(7, "soft_assign / target_distribution hand values to 1e-4, row sums, KL >= 0", passed,
                     f"soft_assign err {checks['soft_assign']:.1e}, target err {checks['target']:.2e} "
                     f"(row 1 = [{yt[1, 0]:.6f}, {yt[1, 1]:.6f}]), row-sum err {row_err:.1e}, min KL {kl_min:.2e}")
    assert passed


# ---------------------------------------------------------------- criterion 8

def test_criterion_08_fuzzy_filter(record_criterion):
    worst = 0.0
    for seed in range(20):
        x = np.random.default_rng(seed).random((12, 12))
        ref = fuzzy_filter_brute(x, sigma=estimate_noise_sigma(x))
        worst = max(worst, float(np.max(np.abs(fuzzy_filter(x) - ref))))
    const = np.full((20, 20), 0.42)
    fix = np.array_equal(fuzzy_filter(const), const)
    reduced = 0
    for trial in range(100):
        noisy = np.clip(0.5 + np.random.default_rng(1000 + trial).normal(0, 0.1, (32, 32)), 0, 1)
        reduced += fuzzy_filter(noisy).var() < noisy.var()
    passed = worst <= 1e-12 and fix and reduced >= 95
    record_criterion(8, "fuzzy filter = exhaustive oracle (20 seeds, 12x12), fixpoint, variance reduction", passed,
                     f"max diff {worst:.1e}, fixpoint {fix}, reduced {reduced}/100")
    assert passed


# ---------------------------------------------------------------- criterion 9

def test_criterion_09_sharpen(record_criterion):
    x = np.zeros((7, 7))
    x[3, 3] = 1.0
    y = sharpen(x, clamp=False)
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = [[0, -1, 0], [-1, 5, -1], [0, -1, 0]]
    impulse = np.array_equal(y, expected) and np.array_equal(SHARPEN_KERNEL, expected[2:5, 2:5])
    const = np.full((9, 11), 0.73)
    fix = np.array_equal(sharpen(const), const) and np.array_equal(sharpen(const, clamp=False), const)
    record_criterion(9, "sharpen impulse response bit-exact, constant fixpoint exact", impulse and fix,
                     f"impulse {impulse}, fixpoint {fix}")
    assert impulse and fix


# ---------------------------------------------------------------- criterion 10

def test_criterion_10_embedding_blobs(record_criterion):
    x, y = test_embed.blobs(n_per=60, dim=80)
    assert x.shape == (180, 80)
    runs = []
    for _ in range(2):
        lab = assign_labels(reduce(x, seed=0))
        mapping, _ = map_clusters_to_classes(lab, y)
        runs.append((lab, apply_mapping(lab, mapping)))
    lab, mapped = runs[0]
    det = np.array_equal(runs[0][0].labels, runs[1][0].labels) and np.array_equal(runs[0][1], runs[1][1])
    a, r = acc(y, lab.labels), ari(y, lab.labels)
    passed = lab.C == 3 and a == 1.0 and r == 1.0 and np.array_equal(mapped, y) and det
    record_criterion(10, "3 blobs, 180 x 80-D: C=3, ACC=1, ARI=1, deterministic", passed,
                     f"C={lab.C} ACC={a} ARI={r} deterministic={det}")
    assert passed


# ---------------------------------------------------------------- criterion 11

def test_criterion_11_inference_latency(record_criterion, tmp_path):
    # full-size geometry and default pre-processing; a single epoch each is
    # enough since only timing is measured here
    cfg = RunConfig.from_dict({
        "data": {"source": "synthetic", "n_per_class": 20, "synthetic_side": 224, "train_fraction": 0.5},
        "vae": {"epochs": 1, "batch": 32},
        "cluster": {"epochs": 1, "batch": 32},
        "embed": {"n_neighbors": 10},
        "run": {"plots": False},
    })
    assert cfg.vae.latent_dim == 80 and cfg.preprocess.side == 224 and cfg.preprocess.fuzzy
    rep = run_pipeline(cfg, tmp_path)
    assert rep.ok, rep.error
    frames = [s.pixels for s in data_mod.make_synthetic(n_per_class=34, side=224, seed=99)][:100]
    results, summary = infer(rep.artifacts["checkpoint_final"], frames)
    per_frame = [r.latency for r in results]
    steady = summary["steady_state_latency"]
    passed = len(per_frame) == 100 and all(l > 0 for l in per_frame) and steady < 0.25
    record_criterion(11, "steady-state per-frame inference < 0.25 s (224 px, latent 80, default flags)", passed,
                     f"steady {steady:.4f}s over {len(per_frame) - summary['warmup_frames']} frames, "
                     f"first {per_frame[0]:.4f}s, max {max(per_frame):.4f}s")
    assert passed
