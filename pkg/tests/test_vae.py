import math
import os

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from deepvc.checkpoint import CheckpointVersionError, load_checkpoint, read_header, save_checkpoint
from deepvc.data import make_synthetic
from deepvc.training import EarlyStopping, TrainConfig, TrainingDivergedError, batches
from deepvc.vae import (LatentCode, PriorSpec, build_model, decode, encode, encode_mean, kl_divergence,
                        model_loss, pretrain, vae_loss)

TINY = (4, 4, 8, 8)


def tiny(side=32, latent=8, prior=None, seed=0, **kw):
    return build_model(side=side, latent_dim=latent, prior=prior, seed=seed, widths=TINY, **kw)


# ---------------------------------------------------------------- shapes and determinism

def test_full_size_geometry_shapes():
    model = build_model(224, 80, seed=0).eval()
    x = torch.rand(2, 224, 224)
    code = encode(model, x, generator=torch.Generator().manual_seed(0))
    assert code.mu.shape == (2, 80) and code.z.shape == (2, 80)
    assert decode(model, code.mu).shape == (2, 224, 224)


def test_side_must_divide_by_16():
    with pytest.raises(ValueError):
        build_model(28, 8, widths=TINY)
    with pytest.raises(ValueError):
        build_model(32, 1, widths=TINY)


def test_mnist_padding_roundtrip_shape():
    model = tiny(side=28, pad_to_multiple=True).eval()
    assert model.side == 32 and model.image_side == 28
    code = encode(model, torch.rand(3, 28, 28))
    assert decode(model, code.mu).shape == (3, 28, 28)
    with pytest.raises(ValueError):
        encode(model, torch.rand(3, 32, 32))


def test_same_seed_same_weights():
    a, b, c = tiny(seed=5), tiny(seed=5), tiny(seed=6)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_build_does_not_touch_global_rng():
    torch.manual_seed(123)
    before = torch.rand(1)
    torch.manual_seed(123)
    tiny(seed=9)
    assert torch.equal(torch.rand(1), before)


def test_fixed_sampler_seed_gives_identical_z():
    model = tiny().eval()
    x = torch.rand(4, 32, 32)
    z1 = encode(model, x, generator=torch.Generator().manual_seed(3)).z
    z2 = encode(model, x, generator=torch.Generator().manual_seed(3)).z
    assert torch.equal(z1, z2)


def test_zero_heads_give_bias():
    model = tiny().eval()
    with torch.no_grad():
        model.fc_mu.weight.zero_()
    mu = encode(model, torch.rand(5, 32, 32)).mu
    assert torch.equal(mu, model.fc_mu.bias.detach().expand(5, -1))


def test_logvar_clamp_bounds_sampler_scale():
    model = tiny().double().eval()
    with torch.no_grad():
        model.fc_logvar.weight.zero_()
        model.fc_logvar.bias.fill_(-40.0)
    eps = torch.randn(2, 8, dtype=torch.float64)
    code = encode(model, torch.rand(2, 32, 32), eps=eps)
    assert torch.all(code.logvar == -20.0)
    # the clamp floor leaves sigma = exp(-10), about 4.5e-5
    assert torch.allclose(code.z - code.mu, math.exp(-10.0) * eps, rtol=1e-9, atol=0)


def test_decode_in_open_unit_interval():
    model = tiny().eval()
    z = torch.randn(16, 8) * 50.0
    y = decode(model, z)
    assert torch.all(y > 0) and torch.all(y < 1)
    assert torch.equal(decode(model, z[:1]), decode(model, z[:1]))
    with pytest.raises(ValueError):
        decode(model, torch.zeros(2, 7))


def test_decode_local_lipschitz_probe():
    model = tiny().double().eval()
    g = torch.Generator().manual_seed(0)
    z = torch.randn(1, 8, generator=g, dtype=torch.float64)
    h = 1e-3
    lip = 0.0
    for _ in range(20):
        u = torch.randn(1, 8, generator=g, dtype=torch.float64)
        u /= u.norm()
        with torch.no_grad():
            lip = max(lip, float((decode(model, z + h * u) - decode(model, z)).norm() / h))
    for _ in range(20):
        d = torch.randn(1, 8, generator=g, dtype=torch.float64)
        d *= 1e-6 / d.norm()
        with torch.no_grad():
            assert float((decode(model, z + d) - decode(model, z)).norm()) <= 2 * lip * 1e-6


# ---------------------------------------------------------------- KL and loss

def test_kl_closed_form_examples():
    z0 = torch.zeros(3, 4)
    assert float(kl_divergence(LatentCode(z0, z0, z0), None)) == 0.0
    mu = torch.zeros(1, 4)
    mu[0, 0] = 1.0
    assert float(kl_divergence(LatentCode(mu, torch.zeros(1, 4), mu), PriorSpec.standard_normal())) == 0.5


@given(st.integers(0, 2 ** 31 - 1))
def test_kl_closed_form_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    mu = torch.randn(6, 5, generator=g, dtype=torch.float64) * 3
    lv = torch.randn(6, 5, generator=g, dtype=torch.float64) * 3
    kl = float(kl_divergence(LatentCode(mu, lv, mu), None))
    assert kl >= -1e-6
    ref = 0.5 * float((mu ** 2 + lv.exp() - 1 - lv).sum(1).mean())
    assert kl == pytest.approx(ref, rel=1e-12)


def test_mixture_mc_kl_matches_closed_form():
    # a one-component mixture at the origin with unit variance is N(0, I)
    prior = PriorSpec("gaussian_mixture", 1, np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1))
    g = torch.Generator().manual_seed(0)
    n = 10_000
    mu = torch.tensor([[0.7, -0.3, 0.1]], dtype=torch.float64).expand(n, 3)
    lv = torch.tensor([[-0.5, 0.2, 0.0]], dtype=torch.float64).expand(n, 3)
    z = mu + (0.5 * lv).exp() * torch.randn(n, 3, generator=g, dtype=torch.float64)
    code = LatentCode(mu, lv, z)
    closed = float(kl_divergence(code, None))
    with torch.no_grad():
        per = [float(kl_divergence(LatentCode(mu[i:i + 1], lv[i:i + 1], z[i:i + 1]), prior))
               for i in range(0, n, 50)]
        mc = float(kl_divergence(code, prior))
    se = np.std(per) / math.sqrt(n)
    assert abs(mc - closed) <= 3 * se


def test_mixture_prior_spec_validation():
    spec = PriorSpec.mixture(3, 8)
    assert spec.weights.sum() == pytest.approx(1.0, abs=1e-12)
    d = np.linalg.norm(spec.means[:, None] - spec.means[None], axis=-1)
    assert np.allclose(d[~np.eye(3, dtype=bool)], d[0, 1])
    with pytest.raises(ValueError):
        PriorSpec("gaussian_mixture", 2, np.zeros((2, 3)), np.zeros((2, 3)), np.array([0.7, 0.4]))
    with pytest.raises(ValueError):
        PriorSpec("laplace")
    assert PriorSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_loss_zero_and_hundred_pixel_example():
    x = torch.rand(2, 1, 32, 32, dtype=torch.float64)
    z0 = torch.zeros(2, 8, dtype=torch.float64)
    code = LatentCode(z0, z0, z0)
    assert float(vae_loss(x, x, code, None).total) == 0.0
    x_hat = x.clone()
    x_hat.view(2, -1)[:, :100] += 0.1
    parts = vae_loss(x, x_hat, code, None)
    assert float(parts.reconstruction) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        vae_loss(x, x[:, :, :31], code, None)


def test_loss_decomposition_exact():
    model = tiny(prior=PriorSpec.mixture(3, 8))
    _, parts = model_loss(model, torch.rand(4, 32, 32), generator=torch.Generator().manual_seed(0))
    assert torch.equal(parts.total, parts.reconstruction + parts.kl)
    assert parts.reconstruction.item() >= 0


# ---------------------------------------------------------------- gradients

def finite_difference_check(loss_fn, params, step=1e-4):
    """Worst per-tensor relative error between autograd and central differences."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            fd = torch.zeros_like(p)
            flat, fdf = p.view(-1), fd.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + step
                up = loss_fn().item()
                flat[i] = old - step
                down = loss_fn().item()
                flat[i] = old
                fdf[i] = (up - down) / (2 * step)
            # conv biases ahead of batch norm have an exactly zero gradient, so
            # the denominator gets a floor instead of dividing roundoff by ~0
            err = float((g - fd).norm()) / max(float(fd.norm()), float(g.norm()), 1e-6)
            worst = max(worst, err)
    return worst


def vae_gradient_error(seed=0):
    model = tiny(prior=PriorSpec.mixture(3, 8), seed=seed).double()
    model.train()
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(4, 32, 32, generator=g, dtype=torch.float64)
    eps = torch.randn(4, 8, generator=g, dtype=torch.float64)

    def loss_fn():
        return model_loss(model, x, eps=eps)[1].total

    return finite_difference_check(loss_fn, list(model.parameters()))


def test_vae_loss_gradients_match_finite_differences():
    assert vae_gradient_error() <= 1e-3


# ---------------------------------------------------------------- training

def two_blob_images(n=200, side=16):
    return make_synthetic(n_per_class=n // 2, side=side, n_classes=2, seed=1)


def test_pretrain_zero_epochs_unchanged():
    model = tiny(side=16)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    model, hist = pretrain(model, two_blob_images(20), TrainConfig(epochs_max=0))
    assert hist == []
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_pretrain_descends_on_two_blobs():
    model = tiny(side=16, prior=PriorSpec.mixture(2, 8))
    _, hist = pretrain(model, two_blob_images(), TrainConfig(epochs_max=30, batch=32, lr=0.01, patience=30))
    assert len(hist) == 30
    assert hist[-1]["loss"] < hist[0]["loss"]
    for row in hist:
        assert row["loss"] == pytest.approx(row["reconstruction"] + row["kl"], rel=1e-6)


def test_pretrain_seed_determinism():
    cfg = TrainConfig(epochs_max=3, batch=16, seed=4)
    h1 = pretrain(tiny(side=16), two_blob_images(40), cfg)[1]
    h2 = pretrain(tiny(side=16), two_blob_images(40), cfg)[1]
    assert h1 == h2


@pytest.mark.skipif(not os.environ.get("DEEPVC_MNIST_ROOT"), reason="set DEEPVC_MNIST_ROOT to the MNIST IDX files")
def test_pretrain_mnist_subset_reconstruction_ssim():
    from deepvc.data import load_mnist
    from deepvc.metrics import ssim
    from deepvc.vae import reconstruct
    root = os.environ["DEEPVC_MNIST_ROOT"]
    train = load_mnist(root, subset_size=10000, seed=0)
    test = load_mnist(root, subset_size=1000, seed=0, split="test")
    model = build_model(side=28, latent_dim=80, prior=PriorSpec.mixture(10, 80), seed=0, pad_to_multiple=True)
    model, _ = pretrain(model, train.images(), TrainConfig(epochs_max=30))
    x = test.images()
    xh = reconstruct(model, x)
    assert np.mean([ssim(a, b) for a, b in zip(x, xh)]) >= 0.8


def test_pretrain_nan_aborts_with_epoch():
    x = np.random.default_rng(0).random((8, 16, 16)).astype(np.float32)
    x[3, 2, 2] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        pretrain(tiny(side=16), x, TrainConfig(epochs_max=2, batch=4))


def test_pretrain_empty_raises():
    with pytest.raises(ValueError):
        pretrain(tiny(side=16), np.zeros((0, 16, 16), dtype=np.float32), TrainConfig(epochs_max=1))


def test_early_stopping_relative_rule():
    s = EarlyStopping(patience=2, min_rel=0.1)
    assert [s.step(v) for v in (10.0, 9.5, 9.4, 5.0, 4.9, 4.8)] == [False, False, True, False, False, True]


def test_batches_cover_and_merge_singleton():
    out = list(batches(9, 4, torch.Generator().manual_seed(0)))
    assert [len(b) for b in out] == [4, 5]
    assert sorted(torch.cat(out).tolist()) == list(range(9))


def test_train_config_validation():
    for kw in (dict(gamma=-1), dict(patience=0), dict(batch=0), dict(lr=0), dict(optimizer="rmsprop")):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
    assert TrainConfig.pretrain_defaults().batch == 128
    assert TrainConfig.finetune_defaults().lr == 0.005


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = tiny(prior=PriorSpec.mixture(3, 8))
    opt = torch.optim.Adam(model.parameters())
    _, parts = model_loss(model, torch.rand(4, 32, 32))
    parts.total.backward()
    opt.step()
    model.eval()
    cents = np.random.default_rng(0).normal(size=(3, 8))
    path = save_checkpoint(tmp_path / "m.uqc", model, cents, opt.state_dict(), epoch=7, config_hash="abc",
                           meta={"k": 1})
    ck = load_checkpoint(path)
    x = np.random.default_rng(1).random((5, 32, 32)).astype(np.float32)
    assert np.array_equal(encode_mean(model, x), encode_mean(ck.model, x))
    assert np.array_equal(ck.centroids, cents)
    assert ck.epoch == 7 and ck.config_hash == "abc" and ck.meta == {"k": 1}
    assert ck.optimizer_state["state"].keys() == opt.state_dict()["state"].keys()
    assert ck.model.architecture_tag == model.architecture_tag
    assert read_header(path)["architecture_tag"] == model.architecture_tag
    sd, sd2 = model.state_dict(), ck.model.state_dict()
    assert all(torch.equal(sd[k], sd2[k]) for k in sd)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.uqc"
    p.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(p)
