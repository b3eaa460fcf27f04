# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the numeric hot loops.

These cover the three inner loops that dominate attack runtime: scattering
Gaussian point weights onto the BEV anchor lattice (density and weighted
moments), gathering per-point gradients from per-anchor coefficients, and
brute-force nearest neighbors for the Chamfer terms.

Semantics are shared with the pure-numpy fallback in ``_kernels_py``:

* Anchor centers sit at ``(x0 + (i + 0.5) * cell, y0 + (j + 0.5) * cell)``
  for ``0 <= i < nx``, ``0 <= j < ny``; flat anchor index is ``i * ny + j``.
* A point contributes ``exp(-r^2 / (2 * sigma^2))`` to every anchor with
  BEV distance ``r <= cutoff``; anchors beyond the cutoff get exactly zero.
* Accumulation order is ascending point index, so results are reproducible
  bit for bit run to run within one backend.
* Nearest-neighbor ties resolve to the lowest reference index.
"""

import numpy as np

from libc.math cimport exp, floor, INFINITY


def bev_density(double[::1] px, double[::1] py,
                double x0, double y0, Py_ssize_t nx, Py_ssize_t ny,
                double cell, double sigma, double cutoff):
    """Gaussian kernel density of the points at each BEV anchor."""
    out = np.zeros(nx * ny)
    cdef double[::1] dens = out
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double cut2 = cutoff * cutoff
    cdef Py_ssize_t hw = <Py_ssize_t>floor(cutoff / cell + 0.5)
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t k, i, j, ci, cj, ilo, ihi, jlo, jhi
    cdef double x, y, dx, dy, r2

    for k in range(n):
        x = px[k]
        y = py[k]
        ci = <Py_ssize_t>floor((x - x0) / cell)
        cj = <Py_ssize_t>floor((y - y0) / cell)
        ilo = ci - hw if ci - hw > 0 else 0
        ihi = ci + hw if ci + hw < nx - 1 else nx - 1
        jlo = cj - hw if cj - hw > 0 else 0
        jhi = cj + hw if cj + hw < ny - 1 else ny - 1
        for i in range(ilo, ihi + 1):
            dx = (x0 + (i + 0.5) * cell) - x
            for j in range(jlo, jhi + 1):
                dy = (y0 + (j + 0.5) * cell) - y
                r2 = dx * dx + dy * dy
                if r2 <= cut2:
                    dens[i * ny + j] += exp(-(r2 * inv2s2))
    return out


def bev_moments(double[::1] px, double[::1] py, double[::1] pz,
                double x0, double y0, Py_ssize_t nx, Py_ssize_t ny,
                double cell, double sigma, double cutoff):
    """Density plus weighted coordinate sums per anchor (for centroids)."""
    out_d = np.zeros(nx * ny)
    out_x = np.zeros(nx * ny)
    out_y = np.zeros(nx * ny)
    out_z = np.zeros(nx * ny)
    cdef double[::1] dens = out_d
    cdef double[::1] sx = out_x
    cdef double[::1] sy = out_y
    cdef double[::1] sz = out_z
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double cut2 = cutoff * cutoff
    cdef Py_ssize_t hw = <Py_ssize_t>floor(cutoff / cell + 0.5)
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t k, i, j, ci, cj, ilo, ihi, jlo, jhi, a
    cdef double x, y, z, dx, dy, r2, w

    for k in range(n):
        x = px[k]
        y = py[k]
        z = pz[k]
        ci = <Py_ssize_t>floor((x - x0) / cell)
        cj = <Py_ssize_t>floor((y - y0) / cell)
        ilo = ci - hw if ci - hw > 0 else 0
        ihi = ci + hw if ci + hw < nx - 1 else nx - 1
        jlo = cj - hw if cj - hw > 0 else 0
        jhi = cj + hw if cj + hw < ny - 1 else ny - 1
        for i in range(ilo, ihi + 1):
            dx = (x0 + (i + 0.5) * cell) - x
            for j in range(jlo, jhi + 1):
                dy = (y0 + (j + 0.5) * cell) - y
                r2 = dx * dx + dy * dy
                if r2 <= cut2:
                    w = exp(-(r2 * inv2s2))
                    a = i * ny + j
                    dens[a] += w
                    sx[a] += w * x
                    sy[a] += w * y
                    sz[a] += w * z
    return out_d, out_x, out_y, out_z


def bev_point_gradient(double[::1] px, double[::1] py, double[::1] coef,
                       double x0, double y0, Py_ssize_t nx, Py_ssize_t ny,
                       double cell, double sigma, double cutoff):
    """Per-point gradient gather.

    Returns ``gx, gy`` with
    ``g[k] = sum_a coef[a] * exp(-r_ka^2 / (2 sigma^2)) * (mu_a - p_k) / sigma^2``
    over the anchors within the cutoff.
    """
    n = px.shape[0]
    out_x = np.zeros(n)
    out_y = np.zeros(n)
    cdef double[::1] gx = out_x
    cdef double[::1] gy = out_y
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double invs2 = 1.0 / (sigma * sigma)
    cdef double cut2 = cutoff * cutoff
    cdef Py_ssize_t hw = <Py_ssize_t>floor(cutoff / cell + 0.5)
    cdef Py_ssize_t npts = px.shape[0]
    cdef Py_ssize_t k, i, j, ci, cj, ilo, ihi, jlo, jhi
    cdef double x, y, dx, dy, r2, c, ax, ay

    for k in range(npts):
        x = px[k]
        y = py[k]
        ci = <Py_ssize_t>floor((x - x0) / cell)
        cj = <Py_ssize_t>floor((y - y0) / cell)
        ilo = ci - hw if ci - hw > 0 else 0
        ihi = ci + hw if ci + hw < nx - 1 else nx - 1
        jlo = cj - hw if cj - hw > 0 else 0
        jhi = cj + hw if cj + hw < ny - 1 else ny - 1
        ax = 0.0
        ay = 0.0
        for i in range(ilo, ihi + 1):
            dx = (x0 + (i + 0.5) * cell) - x
            for j in range(jlo, jhi + 1):
                dy = (y0 + (j + 0.5) * cell) - y
                r2 = dx * dx + dy * dy
                if r2 <= cut2:
                    c = coef[i * ny + j] * exp(-(r2 * inv2s2))
                    ax += c * dx * invs2
                    ay += c * dy * invs2
        gx[k] = ax
        gy[k] = ay
    return out_x, out_y


def bev_cache(double[::1] px, double[::1] py,
              double x0, double y0, Py_ssize_t nx, Py_ssize_t ny,
              double cell, double sigma, double cutoff):
    """Density plus a per-point cache of (anchor, weight, dx, dy) entries.

    The cache lets a following gradient gather skip the exp recomputation.
    Returns ``dens, anchors, weights, dxs, dys, counts`` where the per-point
    entries for point k live at rows ``k * cap ... k * cap + counts[k]`` with
    ``cap`` the full window size.
    """
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double cut2 = cutoff * cutoff
    cdef Py_ssize_t hw = <Py_ssize_t>floor(cutoff / cell + 0.5)
    cdef Py_ssize_t cap = (2 * hw + 1) * (2 * hw + 1)
    cdef Py_ssize_t n = px.shape[0]

    out = np.zeros(nx * ny)
    anchors_np = np.empty(n * cap, dtype=np.intp)
    weights_np = np.empty(n * cap)
    dxs_np = np.empty(n * cap)
    dys_np = np.empty(n * cap)
    counts_np = np.zeros(n, dtype=np.intp)

    cdef double[::1] dens = out
    cdef Py_ssize_t[::1] anchors = anchors_np
    cdef double[::1] weights = weights_np
    cdef double[::1] dxs = dxs_np
    cdef double[::1] dys = dys_np
    cdef Py_ssize_t[::1] counts = counts_np

    cdef Py_ssize_t k, i, j, ci, cj, ilo, ihi, jlo, jhi, pos, a
    cdef double x, y, dx, dy, r2, w

    for k in range(n):
        x = px[k]
        y = py[k]
        ci = <Py_ssize_t>floor((x - x0) / cell)
        cj = <Py_ssize_t>floor((y - y0) / cell)
        ilo = ci - hw if ci - hw > 0 else 0
        ihi = ci + hw if ci + hw < nx - 1 else nx - 1
        jlo = cj - hw if cj - hw > 0 else 0
        jhi = cj + hw if cj + hw < ny - 1 else ny - 1
        pos = k * cap
        for i in range(ilo, ihi + 1):
            dx = (x0 + (i + 0.5) * cell) - x
            for j in range(jlo, jhi + 1):
                dy = (y0 + (j + 0.5) * cell) - y
                r2 = dx * dx + dy * dy
                if r2 <= cut2:
                    w = exp(-(r2 * inv2s2))
                    a = i * ny + j
                    dens[a] += w
                    anchors[pos] = a
                    weights[pos] = w
                    dxs[pos] = dx
                    dys[pos] = dy
                    pos += 1
        counts[k] = pos - k * cap
    return out, anchors_np, weights_np, dxs_np, dys_np, counts_np


def bev_gradient_from_cache(cache, double[::1] coef, double sigma):
    """Per-point gradient gather reusing a ``bev_cache`` result."""
    _, anchors_np, weights_np, dxs_np, dys_np, counts_np = cache
    cdef Py_ssize_t[::1] anchors = anchors_np
    cdef double[::1] weights = weights_np
    cdef double[::1] dxs = dxs_np
    cdef double[::1] dys = dys_np
    cdef Py_ssize_t[::1] counts = counts_np
    cdef Py_ssize_t n = counts.shape[0]
    cdef Py_ssize_t cap = 0
    if n > 0:
        cap = anchors.shape[0] // n
    out_x = np.zeros(n)
    out_y = np.zeros(n)
    cdef double[::1] gx = out_x
    cdef double[::1] gy = out_y
    cdef double invs2 = 1.0 / (sigma * sigma)
    cdef Py_ssize_t k, q, pos
    cdef double c, ax, ay

    for k in range(n):
        pos = k * cap
        ax = 0.0
        ay = 0.0
        for q in range(counts[k]):
            c = coef[anchors[pos + q]] * weights[pos + q]
            ax += c * dxs[pos + q] * invs2
            ay += c * dys[pos + q] * invs2
        gx[k] = ax
        gy[k] = ay
    return out_x, out_y


def nearest_sq(double[:, ::1] pts, double[:, ::1] ref):
    """Squared distance and index of the nearest reference point for each point."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t m = ref.shape[0]
    out_d = np.empty(n)
    out_i = np.empty(n, dtype=np.intp)
    cdef double[::1] d2 = out_d
    cdef Py_ssize_t[::1] idx = out_i
    cdef Py_ssize_t k, j, best_j
    cdef double x, y, z, dx, dy, dz, dist, best

    for k in range(n):
        x = pts[k, 0]
        y = pts[k, 1]
        z = pts[k, 2]
        best = INFINITY
        best_j = -1
        for j in range(m):
            dx = ref[j, 0] - x
            dy = ref[j, 1] - y
            dz = ref[j, 2] - z
            dist = dx * dx + dy * dy + dz * dz
            if dist < best:
                best = dist
                best_j = j
        d2[k] = best
        idx[k] = best_j
    return out_d, out_i
