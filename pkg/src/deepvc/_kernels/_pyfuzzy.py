"""NumPy fallback for the fuzzy non-local window filter.

Vectorized over pixels, looping over search offsets. Additions are performed
in the same order as the compiled kernel, so window distances match it
bit for bit.
"""
import math

import numpy as np

_ROW_CHUNK = 16
# libm exp as in the compiled kernel; NumPy's SIMD exp can differ in the last bit
_exp = np.vectorize(math.exp, otypes=[np.float64])


def _box_stats(P, H, W, w):
    area = float(w * w)
    rs = P[:, 0:W].copy()
    rs2 = P[:, 0:W] * P[:, 0:W]
    for t in range(1, w):
        x = P[:, t:t + W]
        rs = rs + x
        rs2 = rs2 + x * x
    s = rs[0:H].copy()
    s2 = rs2[0:H].copy()
    for t in range(1, w):
        s = s + rs[t:t + H]
        s2 = s2 + rs2[t:t + H]
    mean = s / area
    var = s2 / area - mean * mean
    return mean, var


def _window_distances(P, lo, hi, c0, c1, w, dr, dc):
    nr, nc = hi - lo, c1 - c0
    e = P[lo:hi + w - 1, c0:c1 + w - 1] - P[lo + dr:hi + w - 1 + dr, c0 + dc:c1 + w - 1 + dc]
    E = e * e
    rs = E[:, 0:nc].copy()
    for t in range(1, w):
        rs = rs + E[:, t:t + nc]
    d2 = rs[0:nr].copy()
    for t in range(1, w):
        d2 = d2 + rs[t:t + nr]
    return d2


def fuzzy_filter_kernel(P, H, W, w, radius, n_keep, mean_tol, var_tol, sigma):
    P = np.ascontiguousarray(P, dtype=np.float64)
    h = w // 2
    image = P[h:h + H, h:h + W]
    n_other = n_keep - 1
    if n_other == 0:
        return np.clip(image, 0.0, 1.0)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)

    mean, var = _box_stats(P, H, W, w)
    # scan order decides ties, exactly as in the compiled kernel
    offsets = [(dr, dc)
               for dr in range(-radius, radius + 1)
               for dc in range(-radius, radius + 1)
               if (dr, dc) != (0, 0)]

    out = np.empty((H, W), dtype=np.float64)
    for a in range(0, H, _ROW_CHUNK):
        b = min(H, a + _ROW_CHUNK)
        D = np.full((b - a, W, len(offsets)), np.inf)
        V = np.zeros((b - a, W, len(offsets)))
        for k, (dr, dc) in enumerate(offsets):
            lo, hi = max(a, -dr), min(b, H - dr)
            c0, c1 = max(0, -dc), min(W, W - dc)
            if hi <= lo or c1 <= c0:
                continue
            d2 = _window_distances(P, lo, hi, c0, c1, w, dr, dc)
            ok = ((np.abs(mean[lo:hi, c0:c1] - mean[lo + dr:hi + dr, c0 + dc:c1 + dc]) < mean_tol)
                  & (np.abs(var[lo:hi, c0:c1] - var[lo + dr:hi + dr, c0 + dc:c1 + dc]) < var_tol))
            D[lo - a:hi - a, c0:c1, k] = np.where(ok, d2, np.inf)
            V[lo - a:hi - a, c0:c1, k] = image[lo + dr:hi + dr, c0 + dc:c1 + dc]
        order = np.argsort(D, axis=2, kind="stable")[:, :, :n_other]
        top_d = np.take_along_axis(D, order, axis=2)
        top_v = np.take_along_axis(V, order, axis=2)
        wsum = np.ones((b - a, W))
        vsum = np.zeros((b - a, W))
        centre = image[a:b]
        for j in range(top_d.shape[2]):
            valid = np.isfinite(top_d[:, :, j])
            wt = _exp(-np.where(valid, top_d[:, :, j], 0.0) * inv2s2)
            wsum = np.where(valid, wsum + wt, wsum)
            vsum = np.where(valid, vsum + (top_v[:, :, j] - centre) * wt, vsum)
        out[a:b] = np.clip(centre + vsum / wsum, 0.0, 1.0)
    return out
