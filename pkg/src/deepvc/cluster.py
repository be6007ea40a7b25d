"""DEC clustering head: centroid initialization, Student-t soft assignment,
sharpened targets, KL clustering loss and joint fine-tuning."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from . import metrics
from .training import (EarlyStopping, TrainConfig, TrainingDivergedError, as_image_tensor,
                       batches, make_optimizer)
from .vae import ConvVAE, VaeLossParts, encode_mean, model_loss

__all__ = ["TrainConfig", "Centroids", "SoftAssignment", "DegenerateClusterError", "init_centroids",
           "soft_assign", "target_distribution", "clustering_loss", "joint_loss", "finetune"]

KMEANS_RESTARTS = 20


class DegenerateClusterError(RuntimeError):
    """A cluster lost all its mass, or centroids coincide."""


@dataclass
class Centroids:
    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 2:
            raise ValueError("centroids must be a K x N matrix")

    @property
    def K(self) -> int:
        return self.mu.shape[0]


@dataclass
class SoftAssignment:
    yp: np.ndarray
    yt: Optional[np.ndarray] = None

    def hard(self) -> np.ndarray:
        return self.yp.argmax(axis=1)


def _centers(c) -> np.ndarray:
    return c.mu if isinstance(c, Centroids) else np.asarray(c, dtype=np.float64)


def init_centroids(latents, K: int, seed: int = 0) -> Centroids:
    """k-means (Lloyd, k-means++ seeding, 20 restarts, best inertia)."""
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("latents must be an M x N matrix")
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(x) < K:
        raise ValueError(f"need at least K={K} latents, got {len(x)}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=K, init="k-means++", n_init=KMEANS_RESTARTS, algorithm="lloyd",
                    random_state=seed).fit(x)
    mu = km.cluster_centers_
    d = ((mu[:, None] - mu[None]) ** 2).sum(-1) + np.eye(K)
    if np.any(d == 0):
        raise DegenerateClusterError("k-means produced coincident centroids (fewer distinct latents than K)")
    return Centroids(mu)


def soft_assign(latents, centroids) -> np.ndarray:
    """Student-t (one degree of freedom) memberships, normalized over clusters."""
    z = np.asarray(latents, dtype=np.float64)
    mu = _centers(centroids)
    if z.ndim != 2 or z.shape[1] != mu.shape[1]:
        raise ValueError(f"latent dim {z.shape[-1]} does not match centroid dim {mu.shape[1]}")
    d2 = ((z[:, None, :] - mu[None]) ** 2).sum(-1)
    q = 1.0 / (1.0 + d2)
    return q / q.sum(axis=1, keepdims=True)


def target_distribution(yp) -> np.ndarray:
    """Square memberships, divide by soft cluster frequency, renormalize rows."""
    yp = np.asarray(yp, dtype=np.float64)
    f = yp.sum(axis=0)
    if np.any(f <= 0):
        raise DegenerateClusterError(f"cluster(s) {np.flatnonzero(f <= 0).tolist()} have zero soft frequency")
    w = yp ** 2 / f
    return w / w.sum(axis=1, keepdims=True)


def clustering_loss(yt, yp) -> float:
    """Mean over samples of KL(yt_i || yp_i), with 0 log 0 = 0."""
    yt = np.asarray(yt, dtype=np.float64)
    yp = np.asarray(yp, dtype=np.float64)
    if yt.shape != yp.shape:
        raise ValueError(f"shape mismatch {yt.shape} vs {yp.shape}")
    pos = yt > 0
    if np.any(pos & (yp <= 0)):
        raise OverflowError("clustering loss is infinite: zero predicted mass where the target is positive")
    terms = np.zeros_like(yt)
    terms[pos] = yt[pos] * (np.log(yt[pos]) - np.log(yp[pos]))
    return float(terms.sum() / len(yt))


def joint_loss(vae_parts, lc, gamma: float):
    """L = L_V + gamma * L_C; ``vae_parts`` may be a VaeLossParts or a plain number."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    lv = vae_parts.total if isinstance(vae_parts, VaeLossParts) else vae_parts
    if gamma == 0:
        return lv
    return lv + gamma * lc


# torch counterparts used inside the training loop

def soft_assign_torch(z: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
    d2 = ((z[:, None, :] - mu[None]) ** 2).sum(-1)
    q = 1.0 / (1.0 + d2)
    return q / q.sum(dim=1, keepdim=True)


def clustering_loss_torch(yt: torch.Tensor, yp: torch.Tensor) -> torch.Tensor:
    safe_t = torch.where(yt > 0, yt, torch.ones_like(yt))
    terms = torch.where(yt > 0, yt * (torch.log(safe_t) - torch.log(yp)), torch.zeros_like(yt))
    return terms.sum() / yt.shape[0]


def _hard_metrics(truth, yp):
    if truth is None:
        return {}
    pred = yp.argmax(axis=1)
    b = metrics.clustering_metrics(truth, pred)
    return {"ACC": b.acc, "NMI": b.nmi, "ARI": b.ari, "AMI": b.ami}


def finetune(model: ConvVAE, centroids, train, cfg: TrainConfig = TrainConfig.finetune_defaults(),
             labels=None, on_epoch: Optional[Callable[[dict], None]] = None):
    """Jointly optimize the VAE loss and gamma times the clustering loss.

    Each epoch recomputes memberships on the posterior means of the full
    training set, freezes the sharpened targets, then takes minibatch steps on
    encoder, decoder, prior and centroid parameters. Returns
    ``(model, Centroids, history)``.
    """
    x_all = as_image_tensor(train)
    if labels is None and hasattr(train, "has_labels") and train.has_labels:
        labels = train.labels()
    truth = None if labels is None else np.asarray(labels)
    mu0 = _centers(centroids)
    if mu0.shape[1] != model.latent_dim:
        raise ValueError("centroid dimension does not match the model's latent size")
    history = []
    if cfg.epochs_max == 0:
        return model, Centroids(mu0.copy()), history

    dtype = next(model.parameters()).dtype
    mu = torch.nn.Parameter(torch.as_tensor(mu0, dtype=dtype).clone())
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = make_optimizer(list(model.parameters()) + [mu], cfg)
    stopper = EarlyStopping(cfg.patience, cfg.min_rel_improvement)
    m = len(x_all)
    for epoch in range(cfg.epochs_max):
        yp_full = soft_assign(encode_mean(model, x_all), mu.detach().double().numpy())
        if not np.all(np.isfinite(yp_full)):
            raise TrainingDivergedError(f"memberships became non-finite at epoch {epoch}")
        f = yp_full.sum(axis=0)
        if f.min() <= 1e-12 * m:
            raise DegenerateClusterError(f"cluster {int(f.argmin())} collapsed at epoch {epoch}")
        yt_full = torch.as_tensor(target_distribution(yp_full), dtype=dtype)
        row = {"epoch": epoch, **_hard_metrics(truth, yp_full)}

        model.train()
        sums = np.zeros(3)
        for idx in batches(m, cfg.batch, gen):
            code, parts = model_loss(model, x_all[idx], generator=gen)
            lc = clustering_loss_torch(yt_full[idx], soft_assign_torch(code.mu, mu))
            loss = joint_loss(parts, lc, cfg.gamma)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"joint loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += len(idx) * np.array([parts.total.item(), lc.item(), loss.item()])
        lv, lcm, total = sums / m
        row.update({"L_V": float(lv), "L_C": float(lcm), "L": float(total)})
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if stopper.step(total):
            break
    model.eval()
    return model, Centroids(mu.detach().double().numpy()), history


def predict(model: ConvVAE, centroids, images) -> SoftAssignment:
    yp = soft_assign(encode_mean(model, images), centroids)
    return SoftAssignment(yp, target_distribution(yp))
