import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from deepvc.cluster import (Centroids, DegenerateClusterError, clustering_loss, clustering_loss_torch,
                            finetune, init_centroids, joint_loss, predict, soft_assign, soft_assign_torch,
                            target_distribution)
from deepvc.data import make_synthetic
from deepvc.metrics import acc
from deepvc.training import TrainConfig
from deepvc.vae import PriorSpec, VaeLossParts, build_model, encode, encode_mean, pretrain
from test_vae import TINY, finite_difference_check


def row_stochastic(rng, m, k, floor=0.0):
    x = rng.random((m, k)) + floor
    return x / x.sum(axis=1, keepdims=True)


def entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------- init

def test_init_three_points_is_exact():
    x = np.array([[0.0, 1.0], [5.0, 5.0], [-3.0, 2.0]])
    mu = init_centroids(x, 3, seed=0).mu
    assert sorted(map(tuple, mu)) == sorted(map(tuple, x))


def test_init_1d_exhaustive_example():
    x = np.array([0, 0, 10, 10, 20, 20], dtype=float)[:, None]
    assert sorted(init_centroids(x, 3).mu[:, 0]) == [0.0, 10.0, 20.0]


def test_init_recovers_blob_centres():
    rng = np.random.default_rng(0)
    centres = np.eye(3, 5)
    x = np.concatenate([c + rng.normal(0, 0.01, (40, 5)) for c in centres])
    mu = init_centroids(x, 3, seed=1).mu
    for c in centres:
        assert np.min(np.linalg.norm(mu - c, axis=1)) < 0.05


def test_init_deterministic_and_errors():
    x = np.random.default_rng(0).normal(size=(30, 4))
    assert np.array_equal(init_centroids(x, 3, seed=2).mu, init_centroids(x, 3, seed=2).mu)
    with pytest.raises(ValueError):
        init_centroids(x[:2], 3)
    with pytest.raises(DegenerateClusterError):
        init_centroids(np.zeros((5, 2)), 2)


# ---------------------------------------------------------------- soft assignment and target

def test_soft_assign_examples():
    assert soft_assign([[0.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]]) == pytest.approx(np.array([[0.5, 0.5]]))
    yp = soft_assign([[0.0]], [[0.0], [1.0]])
    assert np.max(np.abs(yp - [[2 / 3, 1 / 3]])) <= 1e-4


def target_oracle(yp):
    # exact rational evaluation of the sharpened target
    yp = [[Fraction(v).limit_denominator(10 ** 6) for v in row] for row in yp]
    f = [sum(col) for col in zip(*yp)]
    out = []
    for row in yp:
        w = [p * p / fk for p, fk in zip(row, f)]
        out.append([float(v / sum(w)) for v in w])
    return np.array(out)


def test_target_distribution_example():
    yp = [[0.8, 0.2], [0.6, 0.4]]
    yt = target_distribution(yp)
    assert np.max(np.abs(yt - [[48 / 55, 7 / 55], [27 / 55, 28 / 55]])) <= 1e-12
    assert np.max(np.abs(yt[0] - [0.8727, 0.1273])) <= 1e-4


@given(st.integers(0, 2 ** 32 - 1))
def test_target_matches_rational_oracle(seed):
    yp = row_stochastic(np.random.default_rng(seed), 4, 3, floor=0.01)
    assert np.max(np.abs(target_distribution(yp) - target_oracle(yp))) <= 1e-9


def test_target_fixpoints():
    onehot = np.eye(3)[[0, 1, 2, 1]]
    assert np.array_equal(target_distribution(onehot), onehot)
    uni = np.full((5, 4), 0.25)
    assert np.allclose(target_distribution(uni), uni, atol=1e-15)


def test_target_collapse_raises():
    with pytest.raises(DegenerateClusterError):
        target_distribution([[1.0, 0.0], [1.0, 0.0]])


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30), st.integers(1, 6))
def test_row_sums_are_one(seed, m, k):
    rng = np.random.default_rng(seed)
    yp = soft_assign(rng.normal(size=(m, 4)) * 3, rng.normal(size=(k, 4)))
    assert np.allclose(yp.sum(1), 1.0, atol=1e-9) and np.all(yp > 0) and np.all(yp <= 1)
    yt = target_distribution(yp)
    assert np.allclose(yt.sum(1), 1.0, atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    z, mu, shift = rng.normal(size=(7, 3)), rng.normal(size=(3, 3)), rng.normal(size=3) * 5
    assert np.allclose(soft_assign(z, mu), soft_assign(z + shift, mu + shift), atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5))
def test_target_sharpens_when_frequencies_equal(seed, k):
    rng = np.random.default_rng(seed)
    base = row_stochastic(rng, 3, k, floor=1e-3)
    # every cyclic shift of every row makes all column sums equal
    yp = np.concatenate([np.roll(base, s, axis=1) for s in range(k)])
    assert np.allclose(yp.sum(0), yp.sum(0)[0])
    yt = target_distribution(yp)
    for p, t in zip(yp, yt):
        assert entropy(t) <= entropy(p) + 1e-12


# ---------------------------------------------------------------- losses

def test_clustering_loss_examples():
    rng = np.random.default_rng(0)
    yp = row_stochastic(rng, 6, 3)
    assert clustering_loss(yp, yp) == 0.0
    assert clustering_loss([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(OverflowError):
        clustering_loss([[0.5, 0.5]], [[1.0, 0.0]])


def test_clustering_loss_nonnegative_1000_pairs():
    rng = np.random.default_rng(0)
    vals = [clustering_loss(row_stochastic(rng, 4, 3), row_stochastic(rng, 4, 3, 1e-6)) for _ in range(1000)]
    assert min(vals) >= 0.0


@given(st.integers(0, 2 ** 32 - 1))
def test_clustering_loss_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    a, b = row_stochastic(rng, 5, 3, 1e-3), row_stochastic(rng, 5, 3, 1e-3)
    assert abs(clustering_loss(a, a)) <= 1e-12
    if np.max(np.abs(a - b)) > 1e-6:
        assert clustering_loss(a, b) > 0


def test_torch_versions_agree_with_numpy():
    rng = np.random.default_rng(1)
    z, mu = rng.normal(size=(9, 4)), rng.normal(size=(3, 4))
    yp = soft_assign(z, mu)
    yp_t = soft_assign_torch(torch.from_numpy(z), torch.from_numpy(mu)).numpy()
    assert np.allclose(yp, yp_t, atol=1e-14)
    yt = target_distribution(yp)
    assert float(clustering_loss_torch(torch.from_numpy(yt), torch.from_numpy(yp))) == \
        pytest.approx(clustering_loss(yt, yp), abs=1e-14)


def test_joint_loss_examples():
    assert joint_loss(2.0, 1.0, 0.1) == pytest.approx(2.1, abs=1e-15)
    assert joint_loss(2.0, 123.0, 0.0) == 2.0
    t = torch.tensor(3.0)
    parts = VaeLossParts(t, t, t)
    assert joint_loss(parts, 1.0, 0.0) is t
    assert joint_loss(1.0, 1.0, 0.5) <= joint_loss(1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        joint_loss(1.0, 1.0, -0.1)


def clustering_gradient_error(gamma=0.1, seed=0):
    model = build_model(32, 8, seed=seed, widths=TINY).double()
    model.train()
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(4, 32, 32, generator=g, dtype=torch.float64)
    eps = torch.randn(4, 8, generator=g, dtype=torch.float64)
    mu = torch.nn.Parameter(torch.randn(3, 8, generator=g, dtype=torch.float64) * 0.3)
    with torch.no_grad():
        yt = torch.from_numpy(target_distribution(soft_assign_torch(encode(model, x, eps=eps).mu, mu).numpy()))

    def loss_fn():
        code = encode(model, x, eps=eps)
        return gamma * clustering_loss_torch(yt, soft_assign_torch(code.mu, mu))

    return finite_difference_check(loss_fn, [mu] + list(model.encoder.parameters()) + list(model.fc_mu.parameters()))


def test_clustering_loss_gradients_match_finite_differences():
    assert clustering_gradient_error() <= 1e-3


# ---------------------------------------------------------------- fine-tuning

def test_finetune_zero_epochs_unchanged():
    model = build_model(16, 8, widths=TINY)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    c0 = np.random.default_rng(0).normal(size=(3, 8))
    ds = make_synthetic(n_per_class=4, side=16)
    model, cents, hist = finetune(model, Centroids(c0), ds, TrainConfig(epochs_max=0))
    assert hist == [] and np.array_equal(cents.mu, c0)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_finetune_three_blobs_reaches_perfect_accuracy():
    ds = make_synthetic(n_per_class=40, side=16, n_classes=3, seed=3)
    model = build_model(16, 8, prior=PriorSpec.mixture(3, 8), seed=0, widths=TINY)
    model, _ = pretrain(model, ds, TrainConfig(epochs_max=15, batch=32, lr=0.01, patience=15))
    cents = init_centroids(encode_mean(model, ds), 3, seed=0)
    model, cents, hist = finetune(model, cents, ds, TrainConfig(epochs_max=50, batch=32, lr=0.005, patience=50))
    assert len(hist) == 50
    assert {"ACC", "NMI", "ARI", "AMI", "L_V", "L_C", "L"} <= set(hist[0])
    for row in hist:
        assert row["L"] == pytest.approx(row["L_V"] + 0.1 * row["L_C"], rel=1e-6)
    sa = predict(model, cents, ds)
    assert np.allclose(sa.yp.sum(1), 1.0, atol=1e-9) and np.allclose(sa.yt.sum(1), 1.0, atol=1e-9)
    assert acc(ds.labels(), sa.hard()) == 1.0


def test_finetune_deterministic():
    ds = make_synthetic(n_per_class=6, side=16, seed=2)
    runs = []
    for _ in range(2):
        model = build_model(16, 8, seed=1, widths=TINY)
        c = init_centroids(encode_mean(model, ds), 3)
        runs.append(finetune(model, c, ds, TrainConfig(epochs_max=2, batch=8))[2])
    assert runs[0] == runs[1]


def test_finetune_collapse_raises():
    ds = make_synthetic(n_per_class=5, side=16)
    model = build_model(16, 8, widths=TINY)
    # a centroid at astronomical distance takes no mass
    c = np.zeros((2, 8))
    c[1] = 1e12
    with pytest.raises(DegenerateClusterError):
        finetune(model, Centroids(c), ds, TrainConfig(epochs_max=1))


def test_finetune_dimension_mismatch():
    with pytest.raises(ValueError):
        finetune(build_model(16, 8, widths=TINY), np.zeros((3, 4)), make_synthetic(2, side=16),
                 TrainConfig(epochs_max=1))
