"""Pure-numpy fallback for the compiled kernels.

Mirrors the anchor layout, cutoff rule, and accumulation-order conventions
documented in ``_kernels.pyx``. Used automatically when the extension is not
built, or when ``ADVSIM_BACKEND=python`` forces it (benchmarks do this).
Within this backend results are bit-reproducible; across backends they agree
to a few ulp because reduction orders differ.
"""

import numpy as np


def _window(px, py, x0, y0, nx, ny, cell, sigma, cutoff):
    """Candidate anchor window around each point plus weights and validity."""
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    hw = int(np.floor(cutoff / cell + 0.5))
    offs = np.arange(-hw, hw + 1)
    ci = np.floor((px - x0) / cell).astype(np.intp)
    cj = np.floor((py - y0) / cell).astype(np.intp)
    ii = ci[:, None] + offs[None, :]                       # (n, w)
    jj = cj[:, None] + offs[None, :]
    dx = (x0 + (ii + 0.5) * cell) - px[:, None]            # (n, w)
    dy = (y0 + (jj + 0.5) * cell) - py[:, None]
    r2 = dx[:, :, None] ** 2 + dy[:, None, :] ** 2         # (n, w, w)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    w = np.exp(-(r2 * inv2s2))
    valid = (
        (ii[:, :, None] >= 0) & (ii[:, :, None] < nx)
        & (jj[:, None, :] >= 0) & (jj[:, None, :] < ny)
        & (r2 <= cutoff * cutoff)
    )
    flat = ii[:, :, None] * ny + jj[:, None, :]
    return dx, dy, r2, w, valid, flat


def bev_density(px, py, x0, y0, nx, ny, cell, sigma, cutoff):
    _, _, _, w, valid, flat = _window(px, py, x0, y0, nx, ny, cell, sigma, cutoff)
    dens = np.zeros(nx * ny)
    np.add.at(dens, flat[valid], w[valid])
    return dens


def bev_moments(px, py, pz, x0, y0, nx, ny, cell, sigma, cutoff):
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    pz = np.asarray(pz, dtype=np.float64)
    _, _, _, w, valid, flat = _window(px, py, x0, y0, nx, ny, cell, sigma, cutoff)
    dens = np.zeros(nx * ny)
    sx = np.zeros(nx * ny)
    sy = np.zeros(nx * ny)
    sz = np.zeros(nx * ny)
    idx = flat[valid]
    wv = w[valid]
    # valid's boolean index flattens in C order, i.e. ascending point index
    pxv = np.broadcast_to(px[:, None, None], w.shape)[valid]
    pyv = np.broadcast_to(py[:, None, None], w.shape)[valid]
    pzv = np.broadcast_to(pz[:, None, None], w.shape)[valid]
    np.add.at(dens, idx, wv)
    np.add.at(sx, idx, wv * pxv)
    np.add.at(sy, idx, wv * pyv)
    np.add.at(sz, idx, wv * pzv)
    return dens, sx, sy, sz


def bev_point_gradient(px, py, coef, x0, y0, nx, ny, cell, sigma, cutoff):
    coef = np.asarray(coef, dtype=np.float64)
    dx, dy, _, w, valid, flat = _window(px, py, x0, y0, nx, ny, cell, sigma, cutoff)
    invs2 = 1.0 / (sigma * sigma)
    c = np.where(valid, coef[np.clip(flat, 0, coef.size - 1)], 0.0) * w
    gx = (c * dx[:, :, None] * invs2).sum(axis=(1, 2))
    gy = (c * dy[:, None, :] * invs2).sum(axis=(1, 2))
    return gx, gy


def bev_cache(px, py, x0, y0, nx, ny, cell, sigma, cutoff):
    """Density plus cached window terms for a later gradient gather.

    The cache here keeps the dense window arrays; only the density result
    and the gather outputs are contractual, so the layout differs from the
    compiled backend's compact cache.
    """
    dx, dy, _, w, valid, flat = _window(px, py, x0, y0, nx, ny, cell, sigma, cutoff)
    dens = np.zeros(nx * ny)
    np.add.at(dens, flat[valid], w[valid])
    return dens, (dx, dy, w, valid, flat)


def bev_gradient_from_cache(cache, coef, sigma):
    _, (dx, dy, w, valid, flat) = cache
    coef = np.asarray(coef, dtype=np.float64)
    invs2 = 1.0 / (sigma * sigma)
    c = np.where(valid, coef[np.clip(flat, 0, coef.size - 1)], 0.0) * w
    gx = (c * dx[:, :, None] * invs2).sum(axis=(1, 2))
    gy = (c * dy[:, None, :] * invs2).sum(axis=(1, 2))
    return gx, gy


def nearest_sq(pts, ref, chunk=256):
    """Nearest reference squared distances and indices, ties to lowest index."""
    pts = np.asarray(pts, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n = pts.shape[0]
    d2 = np.empty(n)
    idx = np.empty(n, dtype=np.intp)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = pts[lo:hi, None, :] - ref[None, :, :]
        dist = np.einsum("ijk,ijk->ij", diff, diff)
        best = np.argmin(dist, axis=1)          # first hit wins ties
        d2[lo:hi] = dist[np.arange(hi - lo), best]
        idx[lo:hi] = best
    return d2, idx
