"""Compact UMAP: exact kNN graph, fuzzy simplicial set, spectral init and
edge-sampled SGD layout (compiled when available).

Rows are processed in a canonical (lexicographic) order so the embedding of a
point does not depend on the order in which the points were supplied.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from .. import _kernels

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3
DENSE_EIGH_LIMIT = 2000


def _layout_kernel(backend):
    if backend is None:
        return _kernels.optimize_layout
    if backend == "python":
        return _kernels.PYTHON_KERNELS["optimize_layout"]
    if backend == "cython":
        if _kernels.COMPILED_KERNELS is None:
            raise RuntimeError("compiled kernels are not available")
        return _kernels.COMPILED_KERNELS["optimize_layout"]
    raise ValueError(f"unknown backend {backend!r}")


def find_ab_params(spread: float = 1.0, min_dist: float = 0.1):
    """Fit 1 / (1 + a d^(2b)) to the offset exponential membership curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def knn(query: np.ndarray, data: np.ndarray, k: int, exclude_self: bool = False, chunk: int = 1024):
    """Exact Euclidean k nearest neighbours (ascending distance, ties by index).

    With ``exclude_self`` the query set is the data set and each point is
    forced to be its own first neighbour at distance 0.
    """
    n_q = len(query)
    idx = np.empty((n_q, k), dtype=np.int64)
    dist = np.empty((n_q, k))
    dsq = (data ** 2).sum(1)
    for s in range(0, n_q, chunk):
        q = query[s:s + chunk]
        d2 = (q ** 2).sum(1)[:, None] + dsq[None] - 2.0 * q @ data.T
        np.maximum(d2, 0.0, out=d2)
        if exclude_self:
            rows = np.arange(len(q))
            d2[rows, s + rows] = -1.0
        part = np.argpartition(d2, k - 1, axis=1)[:, :k] if k < d2.shape[1] else np.tile(np.arange(d2.shape[1]), (len(q), 1))
        pd = np.take_along_axis(d2, part, 1)
        order = np.lexsort((part, pd), axis=1)
        part = np.take_along_axis(part, order, 1)
        idx[s:s + chunk] = part
        dist[s:s + chunk] = np.sqrt(np.maximum(np.take_along_axis(d2, part, 1), 0.0))
    return idx, dist


def smooth_knn_dist(distances: np.ndarray, k: float, n_iter: int = 64, bandwidth: float = 1.0):
    """Per-point (sigma, rho) so that the membership mass over neighbours equals log2(k)."""
    n = len(distances)
    target = np.log2(k) * bandwidth
    rho = np.zeros(n)
    for i in range(n):
        nz = distances[i][distances[i] > 0.0]
        if len(nz):
            rho[i] = nz[0]
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    done = np.zeros(n, dtype=bool)
    rest = distances[:, 1:]
    for _ in range(n_iter):
        d = rest - rho[:, None]
        psum = np.where(d > 0, np.exp(-np.maximum(d, 0.0) / mid[:, None]), 1.0).sum(1)
        done |= np.abs(psum - target) < SMOOTH_K_TOLERANCE
        if done.all():
            break
        upd = ~done
        over = upd & (psum > target)
        under = upd & ~(psum > target)
        hi[over] = mid[over]
        mid[over] = (lo[over] + hi[over]) / 2.0
        lo[under] = mid[under]
        inf_hi = under & np.isinf(hi)
        mid[inf_hi] = mid[inf_hi] * 2.0
        fin = under & ~np.isinf(hi)
        mid[fin] = (lo[fin] + hi[fin]) / 2.0
    sigma = mid.copy()
    mean_all = distances.mean()
    mean_i = distances.mean(axis=1)
    pos = rho > 0.0
    sigma[pos] = np.maximum(sigma[pos], MIN_K_DIST_SCALE * mean_i[pos])
    sigma[~pos] = np.maximum(sigma[~pos], MIN_K_DIST_SCALE * mean_all)
    return sigma, rho


def membership_strengths(knn_idx, knn_dist, sigma, rho, bipartite: bool = False):
    n, k = knn_idx.shape
    d = knn_dist - rho[:, None]
    vals = np.where(d <= 0.0, 1.0, np.exp(-np.maximum(d, 0.0) / sigma[:, None]))
    rows = np.repeat(np.arange(n), k)
    if not bipartite:
        vals[knn_idx == np.arange(n)[:, None]] = 0.0
    return rows, knn_idx.ravel(), vals.ravel()


def fuzzy_simplicial_set(x: np.ndarray, n_neighbors: int):
    idx, dist = knn(x, x, n_neighbors, exclude_self=True)
    sigma, rho = smooth_knn_dist(dist, n_neighbors)
    rows, cols, vals = membership_strengths(idx, dist, sigma, rho)
    n = len(x)
    p = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    p.eliminate_zeros()
    pt = p.T.tocsr()
    g = (p + pt - p.multiply(pt)).tocsr()
    g.sum_duplicates()
    g.sort_indices()
    return g


def epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    out = np.full(len(weights), -1.0)
    n_samples = n_epochs * (weights / weights.max())
    pos = n_samples > 0
    out[pos] = float(n_epochs) / n_samples[pos]
    return out


def _pca_init(x, dim, rng):
    xc = x - x.mean(0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:dim]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(dim), np.abs(comps).argmax(1)])
    signs[signs == 0] = 1.0
    y = xc @ (comps * signs[:, None]).T
    if y.shape[1] < dim:
        y = np.hstack([y, rng.normal(scale=1e-4, size=(len(x), dim - y.shape[1]))])
    return y


def _spectral_init(graph, dim, seed):
    n = graph.shape[0]
    deg = np.asarray(graph.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    lap = sp.identity(n) - d @ graph @ d
    k = dim + 1
    if n <= DENSE_EIGH_LIMIT:
        vals, vecs = np.linalg.eigh(lap.toarray())
    else:
        v0 = np.ones(n)
        vals, vecs = eigsh(lap, k, which="SM", ncv=max(2 * k + 1, int(np.sqrt(n))), tol=1e-4, v0=v0,
                           maxiter=n * 5)
    order = np.argsort(vals)[1:k]
    y = vecs[:, order]
    signs = np.sign(y[np.abs(y).argmax(0), np.arange(y.shape[1])])
    signs[signs == 0] = 1.0
    return y * signs


class UMAP:
    """Uniform manifold approximation and projection to ``n_components`` dimensions."""

    def __init__(self, n_neighbors: int = 15, min_dist: float = 0.1, n_components: int = 2,
                 n_epochs: Optional[int] = None, seed: int = 0, spread: float = 1.0,
                 learning_rate: float = 1.0, repulsion_strength: float = 1.0,
                 negative_sample_rate: int = 5, transform_epochs: Optional[int] = None,
                 backend: Optional[str] = None):
        if n_neighbors < 2:
            raise ValueError("n_neighbors must be >= 2")
        if min_dist < 0 or min_dist > spread:
            raise ValueError("min_dist must lie in [0, spread]")
        self.n_neighbors = n_neighbors
        self.min_dist = min_dist
        self.n_components = n_components
        self.n_epochs = n_epochs
        self.seed = seed
        self.spread = spread
        self.learning_rate = learning_rate
        self.repulsion_strength = repulsion_strength
        self.negative_sample_rate = negative_sample_rate
        self.transform_epochs = transform_epochs
        self.backend = backend
        self.a, self.b = find_ab_params(spread, min_dist)
        self._train = None
        self._emb = None

    # ------------------------------------------------------------------ fit
    def fit(self, x) -> "UMAP":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("input must be an M x D matrix")
        m = len(x)
        if m < self.n_neighbors + 1:
            raise ValueError(f"need at least n_neighbors + 1 = {self.n_neighbors + 1} points, got {m}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        order = np.lexsort(x.T[::-1])
        xc = np.ascontiguousarray(x[order])
        rng = np.random.default_rng(self.seed)

        graph = fuzzy_simplicial_set(xc, self.n_neighbors)
        n_epochs = self.n_epochs if self.n_epochs is not None else (500 if m <= 10000 else 200)
        g = graph.tocoo()
        keep = g.data >= g.data.max() / float(n_epochs)
        head = np.ascontiguousarray(g.row[keep], dtype=np.int32)
        tail = np.ascontiguousarray(g.col[keep], dtype=np.int32)
        weights = g.data[keep]

        n_comp, _ = connected_components(graph, directed=False)
        init = None
        if n_comp == 1:
            try:
                init = _spectral_init(graph, self.n_components, self.seed)
            except Exception:  # eigensolver failure falls back to PCA
                init = None
        if init is None:
            init = _pca_init(xc, self.n_components, rng)
        init = init * (10.0 / np.abs(init).max())
        init = init + rng.normal(scale=1e-4, size=init.shape)
        lo, hi = init.min(0), init.max(0)
        emb = np.ascontiguousarray(10.0 * (init - lo) / np.where(hi > lo, hi - lo, 1.0))

        kernel = _layout_kernel(self.backend)
        kernel(emb, emb, head, tail, n_epochs, m, epochs_per_sample(weights, n_epochs), self.a, self.b,
               self.repulsion_strength, self.learning_rate, float(self.negative_sample_rate), True,
               _kernels.seed_state(self.seed))
        self._train = xc
        self._emb = emb
        self.order_ = order
        inverse = np.empty(m, dtype=np.int64)
        inverse[order] = np.arange(m)
        self.embedding_ = emb[inverse]
        return self

    def fit_transform(self, x) -> np.ndarray:
        return self.fit(x).embedding_

    # ------------------------------------------------------------ transform
    def transform(self, x) -> np.ndarray:
        """Place new points into the frozen embedding (training points do not move)."""
        if self._emb is None:
            raise RuntimeError("UMAP has not been fitted")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self._train.shape[1]:
            raise ValueError(f"expected {self._train.shape[1]} features, got {x.shape[1]}")
        if len(x) == 0:
            return np.zeros((0, self.n_components))
        m_train = len(self._train)
        k = self.n_neighbors
        idx, dist = knn(x, self._train, k)
        sigma, rho = smooth_knn_dist(dist, k)
        rows, cols, vals = membership_strengths(idx, dist, sigma, rho, bipartite=True)
        n_epochs = self.transform_epochs
        if n_epochs is None:
            n_epochs = 100 if m_train <= 10000 else 30
        w = vals.reshape(len(x), k)
        w_norm = w / np.maximum(w.sum(1, keepdims=True), 1e-300)
        emb = np.ascontiguousarray(np.einsum("ik,ikd->id", w_norm, self._emb[idx]))
        keep = vals >= vals.max() / float(n_epochs)
        head = np.ascontiguousarray(rows[keep], dtype=np.int32)
        tail = np.ascontiguousarray(cols[keep], dtype=np.int32)
        kernel = _layout_kernel(self.backend)
        kernel(emb, self._emb.copy(), head, tail, n_epochs, m_train,
               epochs_per_sample(vals[keep], n_epochs), self.a, self.b, self.repulsion_strength,
               self.learning_rate / 4.0, float(self.negative_sample_rate), False,
               _kernels.seed_state(self.seed + 1))
        return emb

    # ---------------------------------------------------------------- state
    def params(self):
        return {"n_neighbors": self.n_neighbors, "min_dist": self.min_dist, "n_components": self.n_components,
                "n_epochs": self.n_epochs, "seed": self.seed, "spread": self.spread,
                "learning_rate": self.learning_rate, "repulsion_strength": self.repulsion_strength,
                "negative_sample_rate": self.negative_sample_rate, "transform_epochs": self.transform_epochs}

    def save(self, path) -> Path:
        if self._emb is None:
            raise RuntimeError("UMAP has not been fitted")
        path = Path(path)
        p = self.params()
        np.savez(path, train=self._train, embedding=self._emb,
                 **{f"param_{k}": np.asarray(-1 if v is None else v) for k, v in p.items()})
        return path

    @classmethod
    def load(cls, path, backend: Optional[str] = None) -> "UMAP":
        with np.load(path) as f:
            p = {k[len("param_"):]: f[k].item() for k in f.files if k.startswith("param_")}
            train, emb = f["train"], f["embedding"]
        for key in ("n_epochs", "transform_epochs"):
            if p[key] == -1:
                p[key] = None
        obj = cls(backend=backend, **p)
        obj._train = np.ascontiguousarray(train)
        obj._emb = np.ascontiguousarray(emb)
        return obj
