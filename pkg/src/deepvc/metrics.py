"""Clustering agreement (ARI, AMI, NMI, ACC), silhouette, and reconstruction (SSIM, MSE) metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import gammaln

# MSE is reported in 8-bit intensity units although pixels live in [0, 1]
MSE_SCALE = 255.0


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricBundle:
    ari: Optional[float] = None
    ami: Optional[float] = None
    nmi: Optional[float] = None
    acc: Optional[float] = None
    silhouette: Optional[float] = None
    ssim: Optional[float] = None
    mse: Optional[float] = None

    def to_dict(self):
        return {k: (None if v is None else float(v)) for k, v in asdict(self).items()}


def _as_labels(a, name):
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be a 1-D label vector")
    return a


def contingency(a, b) -> ContingencyTable:
    """counts[i, j] = number of samples with the i-th label of ``a`` and j-th label of ``b``."""
    a, b = _as_labels(a, "a"), _as_labels(b, "b")
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise ValueError("label vectors are empty")
    ra, ia = np.unique(a, return_inverse=True)
    rb, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((len(ra), len(rb)), dtype=np.int64)
    np.add.at(counts, (ia, ib), 1)
    return ContingencyTable(counts, ra, rb)


def _is_same_partition(table: ContingencyTable) -> bool:
    c = table.counts
    return c.shape[0] == c.shape[1] and np.all((c > 0).sum(axis=0) == 1) and np.all((c > 0).sum(axis=1) == 1)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(a, b) -> float:
    """Adjusted Rand index (pair counting, hypergeometric expectation)."""
    t = contingency(a, b)
    n = t.total
    if n < 2:
        raise ValueError("ARI is undefined for fewer than two samples")
    sum_ij = _comb2(t.counts).sum()
    sum_a = _comb2(t.row_sums).sum()
    sum_b = _comb2(t.col_sums).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        # both partitions trivial (one cluster, or all singletons)
        return 1.0 if _is_same_partition(t) else 0.0
    return float((sum_ij - expected) / denom)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_info(t: ContingencyTable) -> float:
    n = t.total
    nz = t.counts > 0
    nij = t.counts[nz].astype(np.float64)
    outer = np.outer(t.row_sums, t.col_sums)[nz].astype(np.float64)
    mi = (nij / n * (np.log(nij) + np.log(n) - np.log(outer))).sum()
    return float(max(mi, 0.0))


def expected_mutual_info(t: ContingencyTable) -> float:
    """Exact expectation of the mutual information under the permutation model."""
    n = t.total
    a = t.row_sums.astype(np.int64)
    b = t.col_sums.astype(np.int64)
    emi = 0.0
    lg_n = gammaln(n + 1)
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            term1 = nij / n
            term2 = np.log(n * nij) - np.log(float(ai) * float(bj))
            log_p = (gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                     - lg_n - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                     - gammaln(n - ai - bj + nij + 1))
            emi += float((term1 * term2 * np.exp(log_p)).sum())
    return emi


def nmi(a, b) -> float:
    """Normalized mutual information, I / sqrt(H(a) H(b)).

    Two constant labelings score 1; exactly one constant labeling scores 0.
    """
    t = contingency(a, b)
    n = t.total
    ha, hb = _entropy(t.row_sums, n), _entropy(t.col_sums, n)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ha == hb else 0.0
    return float(min(1.0, mutual_info(t) / np.sqrt(ha * hb)))


def ami(a, b) -> float:
    """Adjusted mutual information with arithmetic-mean normalization."""
    t = contingency(a, b)
    n = t.total
    ha, hb = _entropy(t.row_sums, n), _entropy(t.col_sums, n)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ha == hb else 0.0
    mi = mutual_info(t)
    emi = expected_mutual_info(t)
    denom = 0.5 * (ha + hb) - emi
    if abs(denom) < 1e-12:
        return 1.0 if _is_same_partition(t) else 0.0
    return float(min(1.0, (mi - emi) / denom))


def match_clusters(pred, truth):
    """Hungarian matching of predicted clusters to classes.

    Returns ``(mapping, matched)`` where ``mapping`` sends each matched
    predicted label to a class label and ``matched`` is the number of samples
    on which the mapping agrees with the truth.
    """
    t = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-t.counts)
    mapping = {t.row_labels[r].item(): t.col_labels[c].item() for r, c in zip(rows, cols)}
    matched = int(t.counts[rows, cols].sum())
    return mapping, matched


def acc(truth, pred) -> float:
    """Unsupervised clustering accuracy under the best one-to-one cluster/class map."""
    truth, pred = _as_labels(truth, "truth"), _as_labels(pred, "pred")
    if len(truth) == 0:
        raise ValueError("accuracy of an empty labeling is undefined")
    _, matched = match_clusters(pred, truth)
    return matched / len(truth)


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient; singleton clusters contribute 0."""
    x = np.asarray(points, dtype=np.float64)
    labels = _as_labels(labels, "labels")
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != len(labels):
        raise ValueError("points and labels differ in length")
    if len(x) < 3:
        raise ValueError("silhouette needs at least three points")
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("silhouette undefined for a single cluster")
    d = cdist(x, x)
    sizes = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    sums = np.zeros((len(x), len(uniq)))
    for k in range(len(uniq)):
        sums[:, k] = d[:, inv == k].sum(axis=1)
    own = sizes[inv]
    a = sums[np.arange(len(x)), inv] / np.maximum(own - 1, 1)
    means = sums / sizes
    means[np.arange(len(x)), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def _gaussian_window(size=11, sigma=1.5):
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable 'valid' correlation
    k = len(g)
    rows = sum(g[i] * x[i:x.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:rows.shape[1] - k + 1 + j] for j in range(k))


def ssim(x, y, data_range: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Structural similarity with an 11x11 Gaussian window over valid positions."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}")
    g = _gaussian_window(window, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def mse(x, y) -> float:
    """Mean squared error in 8-bit units for images stored in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean(((x - y) * MSE_SCALE) ** 2))


def clustering_metrics(truth, pred) -> MetricBundle:
    return MetricBundle(ari=ari(truth, pred), ami=ami(truth, pred), nmi=nmi(truth, pred), acc=acc(truth, pred))
