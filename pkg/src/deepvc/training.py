"""Training configuration and helpers shared by pre-training and fine-tuning."""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 200
    patience: int = 10
    min_rel_improvement: float = 1e-4
    batch: int = 128
    lr: float = 0.01
    gamma: float = 0.1
    K: int = 3
    seed: int = 0
    optimizer: str = "adam"  # or "sgd" (momentum 0.9)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs_max < 0:
            raise ValueError("epochs_max must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def pretrain_defaults(cls, **kw) -> "TrainConfig":
        return cls(**{"batch": 128, "lr": 0.01, **kw})

    @classmethod
    def finetune_defaults(cls, **kw) -> "TrainConfig":
        return cls(**{"batch": 64, "lr": 0.005, **kw})

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999))
    return torch.optim.SGD(params, lr=cfg.lr, momentum=0.9)


class EarlyStopping:
    """Stops after ``patience`` consecutive epochs whose loss improves on the
    best so far by less than ``min_rel`` (relative)."""

    def __init__(self, patience: int, min_rel: float):
        self.patience = patience
        self.min_rel = min_rel
        self.best = math.inf
        self.stale = 0

    def step(self, loss: float) -> bool:
        if math.isinf(self.best):
            self.best = loss
            return False
        rel = (self.best - loss) / max(abs(self.best), 1e-12)
        if rel < self.min_rel:
            self.stale += 1
        else:
            self.stale = 0
        self.best = min(self.best, loss)
        return self.stale >= self.patience


def get_device() -> torch.device:
    """Compute device from ``DEEPVC_DEVICE`` (default cpu)."""
    return torch.device(os.environ.get("DEEPVC_DEVICE", "cpu"))


def batches(n: int, size: int, generator: torch.Generator, shuffle: bool = True):
    """Index batches over ``n`` items; a trailing singleton batch is merged into the previous one."""
    order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
    starts = list(range(0, n, size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    for i, s in enumerate(starts):
        e = starts[i + 1] if i + 1 < len(starts) else n
        yield order[s:e]


def as_image_tensor(images) -> torch.Tensor:
    """(M, H, W) or (M, 1, H, W) array-like to a float32 (M, 1, H, W) tensor."""
    if hasattr(images, "images") and callable(images.images):
        images = images.images()
    t = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
    if t.dim() == 3:
        t = t.unsqueeze(1)
    if t.dim() != 4 or t.shape[1] != 1:
        raise ValueError(f"expected an image batch of shape (M, H, W), got {tuple(t.shape)}")
    return t.float() if not t.is_floating_point() else t
