"""Post-processing variants for the comparison harness.

Each reducer maps latents (M x N) to ``(labels, coords)`` where coords is an
M x 2 array or None.
"""
from __future__ import annotations

import numpy as np
from sklearn.cluster import HDBSCAN, KMeans
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE

from .labels import assign_labels, default_min_cluster_size, reduce


def umap_hdbscan(latents, K, seed, n_neighbors=15, min_dist=0.1, min_cluster_size=None):
    emb = reduce(latents, n_neighbors=n_neighbors, min_dist=min_dist, seed=seed)
    return assign_labels(emb, min_cluster_size).labels, emb.points


def tsne_hdbscan(latents, K, seed, min_cluster_size=None, **_):
    perplexity = min(30.0, (len(latents) - 1) / 3.0)
    pts = TSNE(2, init="pca", random_state=seed, perplexity=perplexity).fit_transform(np.asarray(latents))
    return assign_labels(pts, min_cluster_size).labels, pts


def pca_kmeans(latents, K, seed, **_):
    pts = PCA(2, random_state=seed).fit_transform(np.asarray(latents))
    return KMeans(K, n_init=20, random_state=seed).fit_predict(pts), pts


def kmeans_latent(latents, K, seed, **_):
    return KMeans(K, n_init=20, random_state=seed).fit_predict(np.asarray(latents)), None


def hdbscan_direct(latents, K, seed, min_cluster_size=None, **_):
    x = np.asarray(latents)
    mcs = default_min_cluster_size(len(x)) if min_cluster_size is None else min_cluster_size
    raw = HDBSCAN(min_cluster_size=mcs).fit_predict(x)
    # noise kept as its own group so every sample is scored
    return np.where(raw < 0, raw.max() + 1, raw), None


REDUCERS = {
    "umap-hdbscan": umap_hdbscan,
    "tsne-hdbscan": tsne_hdbscan,
    "pca-kmeans": pca_kmeans,
    "kmeans-latent": kmeans_latent,
    "hdbscan-direct": hdbscan_direct,
}
