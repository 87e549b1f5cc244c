"""Numba inner loops for walking and the kernel double sums.

Everything here mirrors reference implementations that live in `walker` /
`discrepancy` (and are kept for tests); this module exists purely for speed.
All kernels are nogil so a thread pool can drive disjoint pixel chunks.

Value conventions: scalar rasters are float64 with NaN at missing pixels;
the quantized fast path uses uint8 value ids with `missing_id` marking
missing, and packs whole visit sequences into int64 keys so identical
sequences collapse to (unique, multiplicity) pairs before the O(U^2) double
sum — an algebraic regrouping of the same estimator, exact up to FP
summation order.
"""

import numpy as np
from numba import njit

NB_OPTS = dict(cache=True, nogil=True, fastmath=False)


# ---------------------------------------------------------------------------
# Walking

@njit(**NB_OPTS)
def walk_values_f64(u, n, m, start_cdf, cum_t, targets, offx, offy,
                    img, cx, cy, out):
    """Fill out[p, q, i] with the value at the i-th visit of path q of pixel p.

    u: (P, >= n*m) uniforms, row-aligned per pixel; draw j of path q is
    u[p, q*m + j] (draw 0 selects the start state, draws 1..m-1 transitions).
    Out-of-bounds visits produce NaN; missing pixels are NaN in img already.
    """
    npix = cx.shape[0]
    h, w = img.shape
    for p in range(npix):
        bx = cx[p]
        by = cy[p]
        for q in range(n):
            s = np.searchsorted(start_cdf, u[p, q * m], side="right")
            for i in range(m):
                if i > 0:
                    uu = u[p, q * m + i]
                    row = cum_t[s]
                    k = 0
                    while k < 4 and uu >= row[k]:
                        k += 1
                    s = targets[s, k]
                xx = bx + offx[s]
                yy = by + offy[s]
                if 0 <= xx < w and 0 <= yy < h:
                    out[p, q, i] = img[yy, xx]
                else:
                    out[p, q, i] = np.nan
    return out


@njit(**NB_OPTS)
def walk_values_ids(u, n, m, start_cdf, cum_t, targets, offx, offy,
                    ids_img, missing_id, cx, cy, out):
    """Same walk as walk_values_f64 but reading uint8 value ids."""
    npix = cx.shape[0]
    h, w = ids_img.shape
    for p in range(npix):
        bx = cx[p]
        by = cy[p]
        for q in range(n):
            s = np.searchsorted(start_cdf, u[p, q * m], side="right")
            for i in range(m):
                if i > 0:
                    uu = u[p, q * m + i]
                    row = cum_t[s]
                    k = 0
                    while k < 4 and uu >= row[k]:
                        k += 1
                    s = targets[s, k]
                xx = bx + offx[s]
                yy = by + offy[s]
                if 0 <= xx < w and 0 <= yy < h:
                    out[p, q, i] = ids_img[yy, xx]
                else:
                    out[p, q, i] = missing_id
    return out


@njit(**NB_OPTS)
def walk_values_vec3(u, n, m, start_cdf, cum_t, targets, offx, offy,
                     img3, cx, cy, out):
    """Walk over an (H, W, 3) raster (Lab triples); NaN triple = missing."""
    npix = cx.shape[0]
    h, w = img3.shape[:2]
    for p in range(npix):
        bx = cx[p]
        by = cy[p]
        for q in range(n):
            s = np.searchsorted(start_cdf, u[p, q * m], side="right")
            for i in range(m):
                if i > 0:
                    uu = u[p, q * m + i]
                    row = cum_t[s]
                    k = 0
                    while k < 4 and uu >= row[k]:
                        k += 1
                    s = targets[s, k]
                xx = bx + offx[s]
                yy = by + offy[s]
                if 0 <= xx < w and 0 <= yy < h:
                    out[p, q, i, 0] = img3[yy, xx, 0]
                    out[p, q, i, 1] = img3[yy, xx, 1]
                    out[p, q, i, 2] = img3[yy, xx, 2]
                else:
                    out[p, q, i, 0] = np.nan
                    out[p, q, i, 1] = np.nan
                    out[p, q, i, 2] = np.nan
    return out


# ---------------------------------------------------------------------------
# Plain (unquantized) MMD terms: scalar values

@njit(inline="always")
def _k_pair_f64(a, b, m, inv_k2):
    # inverse-quadratic kernel over the common-valid indices; -1 = undefined
    ssum = 0.0
    c = 0
    for i in range(m):
        x = a[i]
        y = b[i]
        if x == x and y == y:
            d = x - y
            ssum += d * d
            c += 1
    if c == 0:
        return -1.0
    return 1.0 / (1.0 + ssum * inv_k2 / c)


@njit(**NB_OPTS)
def _term_intra_f64(vals, inv_k2):
    # sum over ordered pairs (j,k) of one set, exploiting symmetry
    n, m = vals.shape
    s = 0.0
    cnt = 0
    for j in range(n):
        kv = _k_pair_f64(vals[j], vals[j], m, inv_k2)
        if kv >= 0.0:
            s += kv
            cnt += 1
        for k in range(j + 1, n):
            kv = _k_pair_f64(vals[j], vals[k], m, inv_k2)
            if kv >= 0.0:
                s += 2.0 * kv
                cnt += 2
    return s, cnt


@njit(**NB_OPTS)
def _term_cross_f64(a, b, inv_k2):
    n, m = a.shape
    s = 0.0
    cnt = 0
    for j in range(n):
        for k in range(n):
            kv = _k_pair_f64(a[j], b[k], m, inv_k2)
            if kv >= 0.0:
                s += kv
                cnt += 1
    return s, cnt


@njit(**NB_OPTS)
def mmd2_plain_f64(vplus, vminus, kappa, out):
    """Raw per-pixel squared discrepancy (NaN where undefined), no clamping."""
    npix = vplus.shape[0]
    inv_k2 = 1.0 / (kappa * kappa)
    for p in range(npix):
        s1, c1 = _term_intra_f64(vplus[p], inv_k2)
        s2, c2 = _term_intra_f64(vminus[p], inv_k2)
        s3, c3 = _term_cross_f64(vplus[p], vminus[p], inv_k2)
        if c1 > 0 and c2 > 0 and c3 > 0:
            out[p] = s1 / c1 + s2 / c2 - 2.0 * s3 / c3
        else:
            out[p] = np.nan
    return out


# ---------------------------------------------------------------------------
# Quantized fast path: sequences packed into int64 keys

@njit(**NB_OPTS)
def pack_keys(ids, bits, out):
    """Pack (P, n, m) uint8 id sequences into (P, n) int64 keys."""
    npix, n, m = ids.shape
    for p in range(npix):
        for q in range(n):
            key = np.int64(0)
            for i in range(m):
                key |= np.int64(ids[p, q, i]) << (bits * i)
            out[p, q] = key
    return out


@njit(inline="always")
def _k_keys(ka, kb, m, bits, maskv, missing_id, lut, inv_k2):
    ssum = 0.0
    c = 0
    a = ka
    b = kb
    for _ in range(m):
        ia = a & maskv
        ib = b & maskv
        a >>= bits
        b >>= bits
        if ia != missing_id and ib != missing_id:
            ssum += lut[ia, ib]
            c += 1
    if c == 0:
        return -1.0
    return 1.0 / (1.0 + ssum * inv_k2 / c)


@njit(inline="always")
def _collapse_sorted(keys_sorted, uniq, wgt):
    # keys_sorted: (n,) ascending; returns count of uniques
    n = keys_sorted.shape[0]
    u = 0
    uniq[0] = keys_sorted[0]
    wgt[0] = 1
    for i in range(1, n):
        if keys_sorted[i] != uniq[u]:
            u += 1
            uniq[u] = keys_sorted[i]
            wgt[u] = 1
        else:
            wgt[u] += 1
    return u + 1


@njit(**NB_OPTS)
def mmd2_dedup(keys_p, keys_m, m, bits, missing_id, lut, kappa, out):
    """Deduplicated per-pixel squared discrepancy; exact regrouping of the
    plain double sum (weights = multiplicities of identical sequences)."""
    npix, n = keys_p.shape
    inv_k2 = 1.0 / (kappa * kappa)
    maskv = np.int64((1 << bits) - 1)
    up = np.empty(n, dtype=np.int64)
    wp = np.empty(n, dtype=np.int64)
    um = np.empty(n, dtype=np.int64)
    wm = np.empty(n, dtype=np.int64)
    for p in range(npix):
        cp = _collapse_sorted(np.sort(keys_p[p]), up, wp)
        cm = _collapse_sorted(np.sort(keys_m[p]), um, wm)
        s1 = 0.0
        c1 = 0
        for a in range(cp):
            kv = _k_keys(up[a], up[a], m, bits, maskv, missing_id, lut, inv_k2)
            if kv >= 0.0:
                s1 += wp[a] * wp[a] * kv
                c1 += wp[a] * wp[a]
            for b in range(a + 1, cp):
                kv = _k_keys(up[a], up[b], m, bits, maskv, missing_id, lut, inv_k2)
                if kv >= 0.0:
                    wgt = 2 * wp[a] * wp[b]
                    s1 += wgt * kv
                    c1 += wgt
        s2 = 0.0
        c2 = 0
        for a in range(cm):
            kv = _k_keys(um[a], um[a], m, bits, maskv, missing_id, lut, inv_k2)
            if kv >= 0.0:
                s2 += wm[a] * wm[a] * kv
                c2 += wm[a] * wm[a]
            for b in range(a + 1, cm):
                kv = _k_keys(um[a], um[b], m, bits, maskv, missing_id, lut, inv_k2)
                if kv >= 0.0:
                    wgt = 2 * wm[a] * wm[b]
                    s2 += wgt * kv
                    c2 += wgt
        s3 = 0.0
        c3 = 0
        for a in range(cp):
            for b in range(cm):
                kv = _k_keys(up[a], um[b], m, bits, maskv, missing_id, lut, inv_k2)
                if kv >= 0.0:
                    wgt = wp[a] * wm[b]
                    s3 += wgt * kv
                    c3 += wgt
        if c1 > 0 and c2 > 0 and c3 > 0:
            out[p] = s1 / c1 + s2 / c2 - 2.0 * s3 / c3
        else:
            out[p] = np.nan
    return out


# ---------------------------------------------------------------------------
# Color terms (Lab triples), delta = Euclidean/100 or CIEDE2000/100

@njit(inline="always")
def _de2000_sq(l1, a1, b1, l2, a2, b2):
    """Squared CIEDE2000 difference of two Lab triples (kL=kC=kH=1)."""
    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar = 0.5 * (c1 + c2)
    c7 = cbar ** 7
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0 if (a1p != 0.0 or b1 != 0.0) else 0.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0 if (a2p != 0.0 or b2 != 0.0) else 0.0
    dlp = l2 - l1
    dcp = c2p - c1p
    if c1p * c2p == 0.0:
        dh = 0.0
        hbp = h1p + h2p
    else:
        dh = h2p - h1p
        if dh > 180.0:
            dh -= 360.0
        elif dh < -180.0:
            dh += 360.0
        hsum = h1p + h2p
        if abs(h1p - h2p) <= 180.0:
            hbp = 0.5 * hsum
        elif hsum < 360.0:
            hbp = 0.5 * hsum + 180.0
        else:
            hbp = 0.5 * hsum - 180.0
    dhp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)
    lbp = 0.5 * (l1 + l2)
    cbp = 0.5 * (c1p + c2p)
    t = (1.0 - 0.17 * np.cos(np.radians(hbp - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    cb7 = cbp ** 7
    rc = 2.0 * np.sqrt(cb7 / (cb7 + 25.0 ** 7))
    lm50 = (lbp - 50.0) ** 2
    sl = 1.0 + 0.015 * lm50 / np.sqrt(20.0 + lm50)
    sc = 1.0 + 0.045 * cbp
    sh = 1.0 + 0.015 * cbp * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc
    tl = dlp / sl
    tc = dcp / sc
    th = dhp / sh
    return tl * tl + tc * tc + th * th + rt * tc * th


@njit(inline="always")
def _k_pair_vec3(a, b, m, inv_k2, de2000):
    # inv_k2 pre-divides by 100^2 so lut-free Lab distances drop in directly
    ssum = 0.0
    c = 0
    for i in range(m):
        l1 = a[i, 0]
        l2 = b[i, 0]
        if l1 == l1 and l2 == l2:
            if de2000:
                ssum += _de2000_sq(l1, a[i, 1], a[i, 2], l2, b[i, 1], b[i, 2])
            else:
                d0 = l1 - l2
                d1 = a[i, 1] - b[i, 1]
                d2 = a[i, 2] - b[i, 2]
                ssum += d0 * d0 + d1 * d1 + d2 * d2
            c += 1
    if c == 0:
        return -1.0
    return 1.0 / (1.0 + ssum * inv_k2 / c)


@njit(**NB_OPTS)
def mmd2_plain_vec3(vplus, vminus, kappa, de2000, out):
    npix, n, m = vplus.shape[:3]
    inv_k2 = 1.0 / (kappa * kappa * 10000.0)  # deltas carry a 1/100 factor
    for p in range(npix):
        s1 = 0.0
        c1 = 0
        for j in range(n):
            kv = _k_pair_vec3(vplus[p, j], vplus[p, j], m, inv_k2, de2000)
            if kv >= 0.0:
                s1 += kv
                c1 += 1
            for k in range(j + 1, n):
                kv = _k_pair_vec3(vplus[p, j], vplus[p, k], m, inv_k2, de2000)
                if kv >= 0.0:
                    s1 += 2.0 * kv
                    c1 += 2
        s2 = 0.0
        c2 = 0
        for j in range(n):
            kv = _k_pair_vec3(vminus[p, j], vminus[p, j], m, inv_k2, de2000)
            if kv >= 0.0:
                s2 += kv
                c2 += 1
            for k in range(j + 1, n):
                kv = _k_pair_vec3(vminus[p, j], vminus[p, k], m, inv_k2, de2000)
                if kv >= 0.0:
                    s2 += 2.0 * kv
                    c2 += 2
        s3 = 0.0
        c3 = 0
        for j in range(n):
            for k in range(n):
                kv = _k_pair_vec3(vplus[p, j], vminus[p, k], m, inv_k2, de2000)
                if kv >= 0.0:
                    s3 += kv
                    c3 += 1
        if c1 > 0 and c2 > 0 and c3 > 0:
            out[p] = s1 / c1 + s2 / c2 - 2.0 * s3 / c3
        else:
            out[p] = np.nan
    return out


__all__ = [
    "walk_values_f64", "walk_values_ids", "walk_values_vec3",
    "mmd2_plain_f64", "mmd2_dedup", "mmd2_plain_vec3", "pack_keys",
]
