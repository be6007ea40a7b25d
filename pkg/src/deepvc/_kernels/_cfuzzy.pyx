# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fuzzy non-local window filter.

Floating-point operation order mirrors ``_pyfuzzy`` so both backends agree
to the last bit on the window distances. Candidates are ranked by
(distance, scan position), which makes the result independent of the order
in which offsets are visited.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()

cdef int _BAND = 32


cdef void _box_stats(double[:, ::1] P, int H, int W, int w,
                     double[:, ::1] mean, double[:, ::1] var):
    cdef Py_ssize_t r, c, t
    cdef int PH = H + w - 1
    cdef double s, s2, x, area = <double>(w * w)
    cdef double[:, ::1] rs = np.empty((PH, W), dtype=np.float64)
    cdef double[:, ::1] rs2 = np.empty((PH, W), dtype=np.float64)
    for r in range(PH):
        for c in range(W):
            x = P[r, c]
            s = x
            s2 = x * x
            for t in range(1, w):
                x = P[r, c + t]
                s = s + x
                s2 = s2 + x * x
            rs[r, c] = s
            rs2[r, c] = s2
    for r in range(H):
        for c in range(W):
            s = rs[r, c]
            s2 = rs2[r, c]
            for t in range(1, w):
                s = s + rs[r + t, c]
                s2 = s2 + rs2[r + t, c]
            s = s / area
            mean[r, c] = s
            var[r, c] = s2 / area - s * s


cdef inline void _push(double *td, short *tk, int *count, double *worst, int n_other,
                       double d2, short key) noexcept nogil:
    """Insert a candidate into one pixel's sorted top list, ordered by (distance, key)."""
    cdef int cnt = count[0]
    cdef int k
    if cnt == n_other:
        if d2 > worst[0] or (d2 == worst[0] and key > tk[n_other - 1]):
            return
        k = n_other - 1
    else:
        k = cnt
    while k > 0 and td[k - 1] > d2:
        td[k] = td[k - 1]
        tk[k] = tk[k - 1]
        k = k - 1
    # equal distances are rare; the key settles them
    while k > 0 and td[k - 1] == d2 and tk[k - 1] > key:
        td[k] = td[k - 1]
        tk[k] = tk[k - 1]
        k = k - 1
    td[k] = d2
    tk[k] = key
    if cnt < n_other:
        cnt = cnt + 1
        count[0] = cnt
    if cnt == n_other:
        worst[0] = td[n_other - 1]


def fuzzy_filter_kernel(double[:, ::1] P, int H, int W, int w, int radius,
                        int n_keep, double mean_tol, double var_tol, double sigma):
    """Filter an image given its reflect-padded copy ``P`` (pad = w // 2)."""
    cdef int h = w // 2
    cdef int PW = W + w - 1
    cdef int n_other = n_keep - 1
    cdef int m = n_other if n_other > 0 else 1
    cdef int band = _BAND
    cdef int side = 2 * radius + 1
    cdef Py_ssize_t a, b, r, c, t, j, dr, dc, r0, r1, c0, c1, ip, iq
    cdef short key_p, key_q
    cdef int ok, n_p, n_q
    cdef double d2, s, e, wsum, vsum, wt, inv2s2
    cdef double *prow
    cdef double *qrow
    cdef double *erow
    cdef double *srow
    cdef double *mrow
    cdef double *mcand
    cdef double *vrow
    cdef double *vcand
    cdef double *wrow
    cdef double *wcand
    cdef double[:, ::1] mean = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] var = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] E = np.empty((band + w - 1, PW), dtype=np.float64)
    cdef double[:, ::1] RS = np.empty((band + w - 1, W), dtype=np.float64)
    cdef double[::1] D2 = np.empty(W, dtype=np.float64)
    cdef Py_ssize_t[::1] sel_p = np.empty(W, dtype=np.intp)
    cdef Py_ssize_t[::1] sel_q = np.empty(W, dtype=np.intp)
    cdef double[:, ::1] top_d = np.empty((H * W, m), dtype=np.float64)
    cdef short[:, ::1] top_k = np.empty((H * W, m), dtype=np.int16)
    cdef double[::1] worst = np.full(H * W, np.inf, dtype=np.float64)
    cdef int[::1] count = np.zeros(H * W, dtype=np.intc)
    cdef double[:, ::1] out = np.empty((H, W), dtype=np.float64)

    if side * side > 32767:
        raise ValueError(f"search radius {radius} is too large for 16-bit offset keys")
    _box_stats(P, H, W, w, mean, var)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)

    with nogil:
        if n_other > 0:
            # window distance is symmetric, so each offset in the lower half
            # plane serves both ends of the pair; the key is the row-major scan
            # position of the offset as seen from the receiving pixel and
            # breaks distance ties
            a = 0
            while a < H:
                b = a + band if a + band < H else H
                for dr in range(0, radius + 1):
                    r0 = a
                    r1 = b if b < H - dr else H - dr
                    if r1 <= r0:
                        continue
                    for dc in range(-radius, radius + 1):
                        if dr == 0 and dc <= 0:
                            continue
                        c0 = 0 if -dc < 0 else -dc
                        c1 = W if W - dc > W else W - dc
                        if c1 <= c0:
                            continue
                        key_p = (dr + radius) * side + dc + radius
                        key_q = (radius - dr) * side + radius - dc
                        # squared differences between the two padded planes;
                        # loops run along contiguous rows so they vectorize
                        for r in range(r0, r1 + w - 1):
                            prow = &P[r, 0]
                            qrow = &P[r + dr, 0]
                            erow = &E[r - r0, 0]
                            for c in range(c0, c1 + w - 1):
                                e = prow[c] - qrow[c + dc]
                                erow[c] = e * e
                            srow = &RS[r - r0, 0]
                            for c in range(c0, c1):
                                srow[c] = erow[c]
                            for t in range(1, w):
                                for c in range(c0, c1):
                                    srow[c] = srow[c] + erow[c + t]
                        for r in range(r0, r1):
                            srow = &RS[r - r0, 0]
                            for c in range(c0, c1):
                                D2[c] = srow[c]
                            for t in range(1, w):
                                srow = &RS[r - r0 + t, 0]
                                for c in range(c0, c1):
                                    D2[c] = D2[c] + srow[c]
                            mrow = &mean[r, 0]
                            mcand = &mean[r + dr, 0]
                            vrow = &var[r, 0]
                            vcand = &var[r + dr, 0]
                            wrow = &worst[r * W]
                            wcand = &worst[(r + dr) * W + dc]
                            # branch-free gate into index lists; a stale worst
                            # only lets extra candidates through to _push,
                            # which checks again
                            n_p = 0
                            n_q = 0
                            for c in range(c0, c1):
                                ok = (fabs(mrow[c] - mcand[c + dc]) < mean_tol) & (fabs(vrow[c] - vcand[c + dc]) < var_tol)
                                d2 = D2[c]
                                sel_p[n_p] = c
                                n_p = n_p + (ok & (d2 <= wrow[c]))
                                sel_q[n_q] = c
                                n_q = n_q + (ok & (d2 <= wcand[c]))
                            for j in range(n_p):
                                c = sel_p[j]
                                ip = r * W + c
                                _push(&top_d[ip, 0], &top_k[ip, 0], &count[ip], &worst[ip], n_other, D2[c], key_p)
                            for j in range(n_q):
                                c = sel_q[j]
                                iq = (r + dr) * W + c + dc
                                _push(&top_d[iq, 0], &top_k[iq, 0], &count[iq], &worst[iq], n_other, D2[c], key_q)
                a = b

        for r in range(H):
            for c in range(W):
                ip = r * W + c
                wsum = 1.0
                # weighted offsets from the centre keep constant regions exact
                vsum = 0.0
                for j in range(count[ip]):
                    wt = exp(-top_d[ip, j] * inv2s2)
                    wsum = wsum + wt
                    # the key encodes the offset of the matched window
                    t = top_k[ip, j]
                    vsum = vsum + (P[r + h + t // side - radius, c + h + t % side - radius]
                                   - P[r + h, c + h]) * wt
                s = P[r + h, c + h] + vsum / wsum
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
                out[r, c] = s
    return np.asarray(out)
