"""Convolutional VAE: model, losses and pre-training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .training import (EarlyStopping, TrainConfig, TrainingDivergedError, as_image_tensor,
                       batches, make_optimizer)

LOGVAR_MIN, LOGVAR_MAX = -20.0, 20.0
DEFAULT_WIDTHS = (32, 64, 128, 256)
_LOG_2PI = math.log(2.0 * math.pi)
# decoder logits are bounded so float32 sigmoid outputs never round to 0 or 1
_LOGIT_BOUND = 15.0


@dataclass
class PriorSpec:
    kind: str = "standard_normal"
    components: int = 0
    means: Optional[np.ndarray] = None
    logvars: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("standard_normal", "gaussian_mixture"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            self.means = np.asarray(self.means, dtype=np.float64)
            self.logvars = np.asarray(self.logvars, dtype=np.float64)
            self.weights = np.asarray(self.weights, dtype=np.float64)
            k = self.components
            if k < 1 or self.means.ndim != 2 or self.means.shape[0] != k:
                raise ValueError("mixture means must be a components x N matrix")
            if self.logvars.shape != self.means.shape:
                raise ValueError("mixture logvars must match the means' shape")
            if self.weights.shape != (k,) or np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-9:
                raise ValueError("mixture weights must be a probability vector")

    @classmethod
    def standard_normal(cls) -> "PriorSpec":
        return cls()

    @classmethod
    def mixture(cls, components: int, latent_dim: int, scale: float = 3.0) -> "PriorSpec":
        """Equal-weight, unit-variance mixture with means on a centred simplex.

        Component k sits at ``scale * (e_k - 1/K)`` (padded with zeros past
        ``latent_dim``), so all pairs of means are equally far apart.
        """
        if components < 1:
            raise ValueError("components must be >= 1")
        means = np.zeros((components, latent_dim))
        eye = np.eye(components) - 1.0 / components
        d = min(components, latent_dim)
        means[:, :d] = scale * eye[:, :d]
        return cls("gaussian_mixture", components, means, np.zeros((components, latent_dim)),
                   np.full(components, 1.0 / components))

    def to_dict(self):
        if self.kind == "standard_normal":
            return {"kind": self.kind}
        return {"kind": self.kind, "components": self.components, "means": self.means.tolist(),
                "logvars": self.logvars.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PriorSpec":
        if d["kind"] == "standard_normal":
            return cls()
        return cls(d["kind"], int(d["components"]), d["means"], d["logvars"], d["weights"])


class MixturePrior(nn.Module):
    """Trainable Gaussian-mixture prior (means, log-variances, weight logits)."""

    def __init__(self, spec: PriorSpec):
        super().__init__()
        self.means = nn.Parameter(torch.as_tensor(spec.means, dtype=torch.float32).clone())
        self.logvars = nn.Parameter(torch.as_tensor(spec.logvars, dtype=torch.float32).clone())
        self.logits = nn.Parameter(torch.log(torch.as_tensor(spec.weights, dtype=torch.float32)))

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        lv = self.logvars.clamp(LOGVAR_MIN, LOGVAR_MAX)
        diff = z[:, None, :] - self.means[None]
        comp = -0.5 * (_LOG_2PI + lv[None] + diff ** 2 / lv.exp()[None]).sum(-1)
        return torch.logsumexp(comp + F.log_softmax(self.logits, 0)[None], dim=1)

    def spec(self) -> PriorSpec:
        w = F.softmax(self.logits.detach().double(), 0).numpy()
        return PriorSpec("gaussian_mixture", self.means.shape[0], self.means.detach().double().numpy(),
                         self.logvars.detach().double().numpy(), w / w.sum())


class LatentCode(NamedTuple):
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor


@dataclass
class VaeLossParts:
    reconstruction: torch.Tensor
    kl: torch.Tensor
    total: torch.Tensor

    def item(self):
        return {"reconstruction": float(self.reconstruction), "kl": float(self.kl), "total": float(self.total)}


def _block(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.BatchNorm2d(cout), nn.SiLU())


def _up_block(cin, cout):
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1), nn.BatchNorm2d(cout), nn.SiLU())


class ConvVAE(nn.Module):
    def __init__(self, side: int, latent_dim: int, widths: Sequence[int] = DEFAULT_WIDTHS,
                 prior: Optional[PriorSpec] = None, image_side: Optional[int] = None):
        super().__init__()
        if side % 16:
            raise ValueError(f"model side must be divisible by 16, got {side}")
        if latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if len(widths) != 4:
            raise ValueError("exactly four encoder widths are required")
        self.side = side
        self.image_side = side if image_side is None else image_side
        self.latent_dim = latent_dim
        self.widths = tuple(int(w) for w in widths)
        self.prior_spec = prior or PriorSpec.standard_normal()
        s = side // 16
        self._feat = (self.widths[-1], s, s)

        chans = (1,) + self.widths
        self.encoder = nn.Sequential(*[_block(chans[i], chans[i + 1]) for i in range(4)], nn.Flatten())
        flat = self.widths[-1] * s * s
        self.fc_mu = nn.Linear(flat, latent_dim)
        self.fc_logvar = nn.Linear(flat, latent_dim)
        self.fc_dec = nn.Sequential(nn.Linear(latent_dim, flat), nn.SiLU())
        rev = self.widths[::-1]
        self.decoder = nn.Sequential(*[_up_block(rev[i], rev[i + 1]) for i in range(3)],
                                     nn.ConvTranspose2d(rev[-1], 1, 4, stride=2, padding=1))
        self.prior = MixturePrior(self.prior_spec) if self.prior_spec.kind == "gaussian_mixture" else None

    @property
    def architecture_tag(self) -> str:
        w = "-".join(str(x) for x in self.widths)
        return f"convvae-s2x4-w{w}-bn-silu-side{self.side}-img{self.image_side}-z{self.latent_dim}"

    def arch_args(self):
        return {"side": self.side, "image_side": self.image_side, "latent_dim": self.latent_dim,
                "widths": list(self.widths)}

    def current_prior(self) -> PriorSpec:
        return self.prior.spec() if self.prior is not None else PriorSpec.standard_normal()

    def _pad(self, x):
        p = self.side - self.image_side
        if p == 0:
            return x
        lo = p // 2
        return F.pad(x, (lo, p - lo, lo, p - lo))

    def _crop(self, x):
        p = self.side - self.image_side
        if p == 0:
            return x
        lo = p // 2
        return x[..., lo:lo + self.image_side, lo:lo + self.image_side]

    def encode_params(self, x):
        h = self.encoder(self._pad(x))
        return self.fc_mu(h), self.fc_logvar(h).clamp(LOGVAR_MIN, LOGVAR_MAX)

    def decode_logits(self, z):
        h = self.fc_dec(z).view(-1, *self._feat)
        return self._crop(self.decoder(h))

    def forward(self, x, eps=None):
        mu, logvar = self.encode_params(x)
        if eps is None:
            eps = torch.randn_like(mu)
        z = mu + torch.exp(0.5 * logvar) * eps
        return LatentCode(mu, logvar, z), torch.sigmoid(self.decode_logits(z).clamp(-_LOGIT_BOUND, _LOGIT_BOUND))


def build_model(side: int = 224, latent_dim: int = 80, prior: Optional[PriorSpec] = None, seed: int = 0,
                widths: Sequence[int] = DEFAULT_WIDTHS, pad_to_multiple: bool = False) -> ConvVAE:
    """Seeded VAE for ``side`` x ``side`` images.

    With ``pad_to_multiple`` a side that is not a multiple of 16 is zero-padded
    up to the next multiple on input and cropped back on output (28 -> 32).
    """
    image_side = side
    if side % 16:
        if not pad_to_multiple:
            raise ValueError(f"side must be divisible by 16, got {side} (use pad_to_multiple)")
        side = 16 * math.ceil(side / 16)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ConvVAE(side, latent_dim, widths, prior, image_side=image_side)


def _check_batch(model: ConvVAE, x: torch.Tensor):
    if x.shape[-2:] != (model.image_side, model.image_side):
        raise ValueError(f"model expects {model.image_side}x{model.image_side} images, got {tuple(x.shape[-2:])}")


def encode(model: ConvVAE, batch, generator: Optional[torch.Generator] = None,
           eps: Optional[torch.Tensor] = None) -> LatentCode:
    x = as_image_tensor(batch).to(next(model.parameters()).dtype)
    _check_batch(model, x)
    mu, logvar = model.encode_params(x)
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return LatentCode(mu, logvar, mu + torch.exp(0.5 * logvar) * eps)


def decode(model: ConvVAE, z) -> torch.Tensor:
    z = torch.as_tensor(z, dtype=next(model.parameters()).dtype)
    if z.dim() != 2 or z.shape[1] != model.latent_dim:
        raise ValueError(f"latent batch must have shape (B, {model.latent_dim}), got {tuple(z.shape)}")
    return torch.sigmoid(model.decode_logits(z).clamp(-_LOGIT_BOUND, _LOGIT_BOUND))[:, 0]


def kl_divergence(code: LatentCode, prior) -> torch.Tensor:
    """Batch-mean KL(q(z|x) || p(z)).

    Closed form for a standard normal prior; single-sample Monte Carlo estimate
    ``log q(z|x) - log p(z)`` for a mixture prior.
    """
    mu, logvar, z = code
    if isinstance(prior, PriorSpec):
        if prior.kind == "standard_normal":
            prior = None
        else:
            prior = MixturePrior(prior).to(mu.dtype)
    if prior is None:
        return (-0.5 * (1.0 + logvar - mu ** 2 - logvar.exp()).sum(dim=1)).mean()
    log_q = -0.5 * (_LOG_2PI + logvar + (z - mu) ** 2 / logvar.exp()).sum(dim=1)
    return (log_q - prior.log_prob(z)).mean()


def vae_loss(x, x_hat, code: LatentCode, prior) -> VaeLossParts:
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    rec = ((x_hat - x) ** 2).reshape(x.shape[0], -1).sum(dim=1).mean()
    kl = kl_divergence(code, prior)
    return VaeLossParts(rec, kl, rec + kl)


def model_loss(model: ConvVAE, x: torch.Tensor, generator: Optional[torch.Generator] = None,
               eps: Optional[torch.Tensor] = None):
    """Forward pass plus VAE loss on an (B, 1, H, W) batch."""
    x = as_image_tensor(x).to(next(model.parameters()).dtype)
    code = encode(model, x, generator=generator, eps=eps)
    x_hat = torch.sigmoid(model.decode_logits(code.z).clamp(-_LOGIT_BOUND, _LOGIT_BOUND))
    return code, vae_loss(x, x_hat, code, model.prior)


def pretrain(model: ConvVAE, train, cfg: TrainConfig = TrainConfig(),
             on_epoch: Optional[Callable[[dict], None]] = None):
    """Minimize reconstruction + KL with minibatch Adam (or momentum SGD).

    Returns ``(model, history)``; ``history`` holds one dict per epoch with the
    epoch-mean total loss and its two parts.
    """
    x_all = as_image_tensor(train)
    if len(x_all) == 0:
        raise ValueError("training set is empty")
    _check_batch(model, x_all)
    history = []
    if cfg.epochs_max == 0:
        return model, history
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = make_optimizer(model.parameters(), cfg)
    stopper = EarlyStopping(cfg.patience, cfg.min_rel_improvement)
    m = len(x_all)
    for epoch in range(cfg.epochs_max):
        model.train()
        sums = np.zeros(3)
        for idx in batches(m, cfg.batch, gen):
            _, parts = model_loss(model, x_all[idx], generator=gen)
            if not torch.isfinite(parts.total):
                raise TrainingDivergedError(f"pre-training loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            sums += len(idx) * np.array([parts.total.item(), parts.reconstruction.item(), parts.kl.item()])
        loss, rec, kl = sums / m
        row = {"epoch": epoch, "loss": float(loss), "reconstruction": float(rec), "kl": float(kl)}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if stopper.step(loss):
            break
    model.eval()
    return model, history


@torch.no_grad()
def encode_mean(model: ConvVAE, images, batch: int = 256) -> np.ndarray:
    """Posterior means for a whole image set, in eval mode."""
    was_training = model.training
    model.eval()
    x = as_image_tensor(images).to(next(model.parameters()).dtype)
    out = [model.encode_params(x[i:i + batch])[0] for i in range(0, len(x), batch)]
    model.train(was_training)
    return torch.cat(out).double().numpy() if out else np.zeros((0, model.latent_dim))


@torch.no_grad()
def reconstruct(model: ConvVAE, images, batch: int = 256) -> np.ndarray:
    """Decode the posterior mean of each image (eval mode)."""
    was_training = model.training
    model.eval()
    x = as_image_tensor(images).to(next(model.parameters()).dtype)
    out = []
    for i in range(0, len(x), batch):
        mu, _ = model.encode_params(x[i:i + batch])
        out.append(decode(model, mu))
    model.train(was_training)
    return torch.cat(out).double().numpy()
