"""JIT kernels: Joseph projector, backprojector, and the tube-statistic scan.

Sequential loops with fixed iteration order; results are deterministic.
Callers own all unit conventions (see xray/streaks); kernels work in raw
array indices and physical lengths only.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def joseph_forward(img, extent, s_axis, phis, out):
    """Line integrals over parallel rays, linear interpolation along the
    axis most transverse to the ray (Joseph's method)."""
    n = img.shape[0]
    dx = 2.0 * extent / n
    n_s = s_axis.shape[0]
    for j in range(phis.shape[0]):
        c = np.cos(phis[j])
        sn = np.sin(phis[j])
        dxr = -sn
        dyr = c
        if abs(dxr) >= abs(dyr):
            step = dx / abs(dxr)
            slope = dyr / dxr
            for k in range(n_s):
                s = s_axis[k]
                # y along the ray as a function of the column coordinate x
                y0 = s * sn + ((-extent + 0.5 * dx) - s * c) * slope
                acc = 0.0
                y = y0
                for i in range(n):
                    fy = (y + extent) / dx - 0.5
                    iy = int(np.floor(fy))
                    w = fy - iy
                    if 0 <= iy < n:
                        acc += img[iy, i] * (1.0 - w)
                    if 0 <= iy + 1 < n:
                        acc += img[iy + 1, i] * w
                    y += slope * dx
                out[j, k] = acc * step
        else:
            step = dx / abs(dyr)
            slope = dxr / dyr
            for k in range(n_s):
                s = s_axis[k]
                x0 = s * c + ((-extent + 0.5 * dx) - s * sn) * slope
                acc = 0.0
                x = x0
                for i in range(n):
                    fx = (x + extent) / dx - 0.5
                    ix = int(np.floor(fx))
                    w = fx - ix
                    if 0 <= ix < n:
                        acc += img[i, ix] * (1.0 - w)
                    if 0 <= ix + 1 < n:
                        acc += img[i, ix + 1] * w
                    x += slope * dx
                out[j, k] = acc * step


@njit(cache=True)
def backproject_sum(sino, s_min, ds, phis, extent, n, out):
    """Sum over angles of the sinogram sampled at s = x . theta per pixel;
    linear interpolation in s, zero outside the sample centers.  The caller
    applies the angular weight."""
    n_s = sino.shape[1]
    dx = 2.0 * extent / n
    for j in range(phis.shape[0]):
        c = np.cos(phis[j])
        sn = np.sin(phis[j])
        for iy in range(n):
            y = -extent + (iy + 0.5) * dx
            p = y * sn + (-extent + 0.5 * dx) * c
            for ix in range(n):
                fi = (p - s_min) / ds - 0.5
                ii = int(np.floor(fi))
                w = fi - ii
                v = 0.0
                if 0 <= ii < n_s:
                    v += sino[j, ii] * (1.0 - w)
                if 0 <= ii + 1 < n_s:
                    v += sino[j, ii + 1] * w
                out[iy, ix] += v
                p += c * dx


@njit(cache=True)
def _qselect(buf, m, k):
    """k-th smallest (0-based) of buf[:m], partially reordering in place."""
    lo = 0
    hi = m - 1
    while lo < hi:
        mid = (lo + hi) // 2
        # median-of-three pivot
        a, b, c = buf[lo], buf[mid], buf[hi]
        if a > b:
            a, b = b, a
        if b > c:
            b = c
        if a > b:
            b = a
        pivot = b
        i = lo
        j = hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while buf[j] > pivot:
                j -= 1
            if i <= j:
                t = buf[i]
                buf[i] = buf[j]
                buf[j] = t
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return buf[k]
    return buf[lo]


@njit(cache=True)
def _median_destructive(buf, m):
    if m <= 0:
        return np.nan
    k = (m - 1) // 2
    lowmed = _qselect(buf, m, k)
    if m % 2 == 1:
        return lowmed
    # even count: average with the next order statistic (right block min)
    nxt = buf[k + 1]
    for i in range(k + 2, m):
        if buf[i] < nxt:
            nxt = buf[i]
    return 0.5 * (lowmed + nxt)


@njit(cache=True)
def scan_amplitudes(
    xs,
    ys,
    vals,
    phis,
    s_min,
    ds,
    n_s,
    ell_min,
    ell_w,
    w_cells,
    tube_cells,
    ann_lo_cells,
    ann_hi_cells,
    min_bins,
    out,
    levels,
):
    """Transverse second-difference contrast on every (phi, s) cell.

    Per angle, pixels are averaged into (along-line, offset) cells of pitch
    (``ell_w``, ``ds``); the offset-direction second difference at lag
    ``w_cells`` vanishes on constant and linear shading and responds only
    where the image bends at the lag scale.  Per scan cell, each along-line
    bin contributes the max |second difference| over the ``tube_cells``
    nearest offset columns minus the median over the annulus columns
    (``ann_lo_cells``..``ann_hi_cells`` both sides, needs >= 4); ``out`` is
    half the median over bins of that contrast clamped at 0 (half because a
    ridge of height A has second difference 2A at its crest), ``levels`` the
    same without background subtraction.  Cells with fewer than ``min_bins``
    usable bins are NaN.
    """
    npix = xs.shape[0]
    n_lb = int(np.ceil((2.0 * (-ell_min)) / ell_w)) + 2
    n_ann_max = 2 * (ann_hi_cells - ann_lo_cells + 1)

    sums = np.zeros((n_lb, n_s), dtype=np.float64)
    cnts = np.zeros((n_lb, n_s), dtype=np.int64)
    d2 = np.zeros((n_lb, n_s), dtype=np.float64)
    d2ok = np.zeros((n_lb, n_s), dtype=np.uint8)
    diff_all = np.empty((n_s, n_lb), dtype=np.float64)
    lvl_all = np.empty((n_s, n_lb), dtype=np.float64)
    nb = np.zeros(n_s, dtype=np.int64)
    ann_buf = np.empty(n_ann_max, dtype=np.float64)

    for j in range(phis.shape[0]):
        c = np.cos(phis[j])
        sn = np.sin(phis[j])
        for lb in range(n_lb):
            for k in range(n_s):
                sums[lb, k] = 0.0
                cnts[lb, k] = 0
        for i in range(npix):
            p = xs[i] * c + ys[i] * sn
            el = -xs[i] * sn + ys[i] * c
            k = int((p - s_min) / ds)
            lb = int((el - ell_min) / ell_w)
            if 0 <= k < n_s and 0 <= lb < n_lb:
                sums[lb, k] += vals[i]
                cnts[lb, k] += 1
        for lb in range(n_lb):
            for k in range(n_s):
                if cnts[lb, k] > 0:
                    sums[lb, k] /= cnts[lb, k]
        for lb in range(n_lb):
            for k in range(w_cells, n_s - w_cells):
                if (
                    cnts[lb, k] > 0
                    and cnts[lb, k - w_cells] > 0
                    and cnts[lb, k + w_cells] > 0
                ):
                    v = sums[lb, k - w_cells] + sums[lb, k + w_cells] - 2.0 * sums[lb, k]
                    d2[lb, k] = abs(v)
                    d2ok[lb, k] = 1
                else:
                    d2ok[lb, k] = 0
            for k in range(0, min(w_cells, n_s)):
                d2ok[lb, k] = 0
            for k in range(max(n_s - w_cells, 0), n_s):
                d2ok[lb, k] = 0
        for k in range(n_s):
            nb[k] = 0
        for lb in range(n_lb):
            for k in range(n_s):
                amp = -1.0
                klo = k - tube_cells
                khi = k + tube_cells
                if klo < 0:
                    klo = 0
                if khi > n_s - 1:
                    khi = n_s - 1
                for kk in range(klo, khi + 1):
                    if d2ok[lb, kk] == 1 and d2[lb, kk] > amp:
                        amp = d2[lb, kk]
                if amp < 0.0:
                    continue
                n_ann = 0
                for a in range(ann_lo_cells, ann_hi_cells + 1):
                    kk = k - a
                    if kk >= 0 and d2ok[lb, kk] == 1:
                        ann_buf[n_ann] = d2[lb, kk]
                        n_ann += 1
                    kk = k + a
                    if kk < n_s and d2ok[lb, kk] == 1:
                        ann_buf[n_ann] = d2[lb, kk]
                        n_ann += 1
                if n_ann < 4:
                    continue
                bg = _median_destructive(ann_buf, n_ann)
                diff_all[k, nb[k]] = amp - bg
                lvl_all[k, nb[k]] = amp
                nb[k] += 1
        for k in range(n_s):
            if nb[k] >= min_bins:
                a = 0.5 * _median_destructive(diff_all[k], nb[k])
                out[j, k] = a if a > 0.0 else 0.0
                levels[j, k] = 0.5 * _median_destructive(lvl_all[k], nb[k])
            else:
                out[j, k] = np.nan
                levels[j, k] = np.nan
