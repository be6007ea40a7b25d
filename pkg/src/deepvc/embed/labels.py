"""Density-based labels on 2-D embeddings and cluster-to-class mapping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import HDBSCAN

from .. import metrics
from .umap import UMAP


class NoClustersError(RuntimeError):
    pass


@dataclass
class Embedding2D:
    points: np.ndarray
    ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("embedding must be an M x 2 matrix")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("embedding has non-finite coordinates")
        if self.ids is not None:
            self.ids = list(self.ids)
            if len(self.ids) != len(self.points):
                raise ValueError("ids and points differ in length")

    def __len__(self):
        return len(self.points)


@dataclass
class ClusterLabels:
    labels: np.ndarray
    raw_labels: np.ndarray

    @property
    def C(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def n_noise(self) -> int:
        return int((self.raw_labels < 0).sum())


def reduce(latents, n_neighbors: int = 15, min_dist: float = 0.1, seed: int = 0, ids=None,
           return_model: bool = False, **kw):
    """Seeded 2-D UMAP embedding of the latents, rows aligned with the input."""
    model = UMAP(n_neighbors=n_neighbors, min_dist=min_dist, seed=seed, **kw)
    emb = Embedding2D(model.fit_transform(latents), ids)
    return (emb, model) if return_model else emb


def default_min_cluster_size(m: int) -> int:
    return max(5, m // 50)


def assign_labels(embedding, min_cluster_size: Optional[int] = None) -> ClusterLabels:
    """HDBSCAN (excess-of-mass) labels; noise points take their nearest clustered neighbour's label."""
    pts = embedding.points if isinstance(embedding, Embedding2D) else np.asarray(embedding, dtype=np.float64)
    m = len(pts)
    mcs = default_min_cluster_size(m) if min_cluster_size is None else int(min_cluster_size)
    if mcs < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if m < mcs:
        raise ValueError(f"need at least min_cluster_size={mcs} points, got {m}")
    raw = HDBSCAN(min_cluster_size=mcs, cluster_selection_method="eom",
                  allow_single_cluster=True).fit_predict(pts)
    noise = raw < 0
    if noise.all():
        raise NoClustersError("no density clusters found")
    uniq = np.unique(raw[~noise])
    remap = {int(u): i for i, u in enumerate(uniq)}
    labels = np.array([remap.get(int(v), -1) for v in raw], dtype=np.int64)
    if noise.any():
        core = np.flatnonzero(~noise)
        nearest = cdist(pts[noise], pts[core]).argmin(axis=1)
        labels[noise] = labels[core[nearest]]
    return ClusterLabels(labels, raw.astype(np.int64))


def map_clusters_to_classes(pred, truth):
    """Hungarian one-to-one map from predicted clusters to classes.

    Returns ``(mapping, matched)``. Clusters left without a class (more
    clusters than classes) are absent from ``mapping``.
    """
    pred = pred.labels if isinstance(pred, ClusterLabels) else np.asarray(pred)
    return metrics.match_clusters(pred, np.asarray(truth))


def apply_mapping(pred, mapping, unmatched: int = -1) -> np.ndarray:
    pred = pred.labels if isinstance(pred, ClusterLabels) else np.asarray(pred)
    return np.array([mapping.get(int(p), unmatched) for p in pred], dtype=np.int64)
