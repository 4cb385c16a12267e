# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel implementations.

Mirrors fallback.py exactly: same float64 formulas, same evaluation
order, same tie rules, so the two paths produce bit-identical results.
Compiled with -ffp-contract=off to keep FMA contraction from changing
roundoff relative to numpy.
"""

import numpy as np

from libc.math cimport INFINITY, ceil, floor

IMPL = "cython"


def min_hit_param(origin, dirs, axes, params, double t_lo):
    """Per-ray minimum hit parameter t >= t_lo over all rectangles."""
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef int[::1] ax = axes
    cdef double[:, ::1] pr = params
    cdef Py_ssize_t m = d.shape[0], nk = ax.shape[0]
    out = np.full(m, np.inf)
    cdef double[::1] best = out
    cdef Py_ssize_t i, k
    cdef int a, ua, va
    cdef double t, pu, pv
    with nogil:
        for i in range(m):
            for k in range(nk):
                a = ax[k]
                ua = 1 if a == 0 else 0
                va = 1 if a == 2 else 2
                t = (pr[k, 0] - o[a]) / d[i, a]
                if t >= t_lo and t < best[i]:
                    pu = o[ua] + t * d[i, ua]
                    pv = o[va] + t * d[i, va]
                    if pu >= pr[k, 1] and pu <= pr[k, 2] and pv >= pr[k, 3] and pv <= pr[k, 4]:
                        best[i] = t
    return out


cdef bint _rect_bbox(const double[::1] o, const double[::1] right, const double[::1] up,
                     const double[::1] fwd, double tan_h, double tan_v,
                     int width, int height, const double[:, :] corners, double near,
                     int* bx) nogil:
    """Clip the corner quad to z >= near, project, take padded pixel bbox."""
    cdef double vx[8]
    cdef double vy[8]
    cdef double vz[8]
    cdef double rel[4][3]
    cdef double zc[4]
    cdef double vc[3]
    cdef int nv = 0, i, j, c
    cdef double s, px, py
    cdef double x0, x1, y0, y1
    for i in range(4):
        for c in range(3):
            rel[i][c] = corners[i, c] - o[c]
        zc[i] = rel[i][0] * fwd[0] + rel[i][1] * fwd[1] + rel[i][2] * fwd[2]
    for i in range(4):
        j = (i + 1) % 4
        if zc[i] >= near:
            vx[nv] = rel[i][0] * right[0] + rel[i][1] * right[1] + rel[i][2] * right[2]
            vy[nv] = rel[i][0] * up[0] + rel[i][1] * up[1] + rel[i][2] * up[2]
            vz[nv] = zc[i]
            nv += 1
        if (zc[i] >= near) != (zc[j] >= near):
            s = (near - zc[i]) / (zc[j] - zc[i])
            for c in range(3):
                vc[c] = rel[i][c] + s * (rel[j][c] - rel[i][c])
            vx[nv] = vc[0] * right[0] + vc[1] * right[1] + vc[2] * right[2]
            vy[nv] = vc[0] * up[0] + vc[1] * up[1] + vc[2] * up[2]
            vz[nv] = zc[i] + s * (zc[j] - zc[i])
            nv += 1
    if nv == 0:
        return False
    x0 = INFINITY
    x1 = -INFINITY
    y0 = INFINITY
    y1 = -INFINITY
    for i in range(nv):
        px = (vx[i] / (vz[i] * tan_h) + 1.0) * (0.5 * width)
        py = (1.0 - vy[i] / (vz[i] * tan_v)) * (0.5 * height)
        if px < x0: x0 = px
        if px > x1: x1 = px
        if py < y0: y0 = py
        if py > y1: y1 = py
    bx[0] = <int>floor(x0) - 1
    bx[1] = <int>ceil(x1) + 1
    bx[2] = <int>floor(y0) - 1
    bx[3] = <int>ceil(y1) + 1
    if bx[0] < 0: bx[0] = 0
    if bx[1] > width - 1: bx[1] = width - 1
    if bx[2] < 0: bx[2] = 0
    if bx[3] > height - 1: bx[3] = height - 1
    return bx[0] <= bx[1] and bx[2] <= bx[3]


def depth_buffer(origin, right, up, fwd, double tan_h, double tan_v,
                 int width, int height, axes, params, corners, double near):
    """Forward-depth buffer over pixel-center rays (see fallback.depth_buffer)."""
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(right, dtype=np.float64)
    cdef double[::1] u = np.ascontiguousarray(up, dtype=np.float64)
    cdef double[::1] f = np.ascontiguousarray(fwd, dtype=np.float64)
    cdef int[::1] ax = axes
    cdef double[:, ::1] pr = params
    cdef double[:, :, ::1] cor = corners
    out = np.full((height, width), np.inf)
    cdef double[:, ::1] buf = out
    cdef Py_ssize_t nk = ax.shape[0], k
    cdef int bx[4]
    cdef int a, ua, va, px, py
    cdef double aa, bb, d_ax, d_ua, d_va, t, pu, pv
    with nogil:
        for k in range(nk):
            if not _rect_bbox(o, r, u, f, tan_h, tan_v, width, height, cor[k], near, bx):
                continue
            a = ax[k]
            ua = 1 if a == 0 else 0
            va = 1 if a == 2 else 2
            for py in range(bx[2], bx[3] + 1):
                bb = (1.0 - 2.0 * (py + 0.5) / height) * tan_v
                for px in range(bx[0], bx[1] + 1):
                    aa = (2.0 * (px + 0.5) / width - 1.0) * tan_h
                    d_ax = f[a] + aa * r[a] + bb * u[a]
                    t = (pr[k, 0] - o[a]) / d_ax
                    if t >= near and t < buf[py, px]:
                        d_ua = f[ua] + aa * r[ua] + bb * u[ua]
                        d_va = f[va] + aa * r[va] + bb * u[va]
                        pu = o[ua] + t * d_ua
                        pv = o[va] + t * d_va
                        if pu >= pr[k, 1] and pu <= pr[k, 2] and pv >= pr[k, 3] and pv <= pr[k, 4]:
                            buf[py, px] = t
    return out


def fps(positions, Py_ssize_t k, Py_ssize_t start):
    """Greedy maximin FPS, ties to the lowest index."""
    cdef double[:, ::1] p = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    out = np.empty(k, dtype=np.int64)
    cdef long long[::1] sel = out
    dbuf = np.full(n, np.inf)
    cdef double[::1] d = dbuf
    cdef Py_ssize_t i, j, last, arg
    cdef double dx, dy, dz, dist, m
    sel[0] = start
    last = start
    with nogil:
        for i in range(1, k):
            for j in range(n):
                dx = p[j, 0] - p[last, 0]
                dy = p[j, 1] - p[last, 1]
                dz = p[j, 2] - p[last, 2]
                dist = dx * dx + dy * dy + dz * dz
                if dist < d[j]:
                    d[j] = dist
            m = -INFINITY
            arg = 0
            for j in range(n):
                if d[j] > m:
                    m = d[j]
                    arg = j
            sel[i] = arg
            last = arg
    return out


def ball_query(positions, centroids, double radius, Py_ssize_t max_k):
    """Up to max_k in-radius neighbors per centroid, (distance, index) order."""
    cdef double[:, ::1] p = np.ascontiguousarray(positions, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centroids, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], nc = c.shape[0]
    out = np.full((nc, max_k), -1, dtype=np.int64)
    cdef long long[:, ::1] rows = out
    d2buf = np.empty(max_k)
    cdef double[::1] best_d = d2buf
    cdef Py_ssize_t ci, j, cnt, pos
    cdef double dx, dy, dz, d2, r2 = radius * radius
    cdef double near_d
    cdef Py_ssize_t near_i
    with nogil:
        for ci in range(nc):
            cnt = 0
            near_d = INFINITY
            near_i = 0
            for j in range(n):
                dx = p[j, 0] - c[ci, 0]
                dy = p[j, 1] - c[ci, 1]
                dz = p[j, 2] - c[ci, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < near_d:
                    near_d = d2
                    near_i = j
                if d2 <= r2:
                    # insertion into the (d2, index)-sorted top-max_k list
                    if cnt < max_k:
                        pos = cnt
                        while pos > 0 and best_d[pos - 1] > d2:
                            best_d[pos] = best_d[pos - 1]
                            rows[ci, pos] = rows[ci, pos - 1]
                            pos -= 1
                        best_d[pos] = d2
                        rows[ci, pos] = j
                        cnt += 1
                    elif d2 < best_d[max_k - 1]:
                        pos = max_k - 1
                        while pos > 0 and best_d[pos - 1] > d2:
                            best_d[pos] = best_d[pos - 1]
                            rows[ci, pos] = rows[ci, pos - 1]
                            pos -= 1
                        best_d[pos] = d2
                        rows[ci, pos] = j
            if cnt == 0:
                rows[ci, 0] = near_i
    return out


def segment_blocked(blocked, double ox, double oy, double resolution,
                    double x0, double y0, double x1, double y1):
    """True iff the closed segment touches any blocked (closed) cell."""
    cdef const unsigned char[:, ::1] g = blocked
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]
    cdef double sx0 = (x0 - ox) / resolution
    cdef double sy0 = (y0 - oy) / resolution
    cdef double sx1 = (x1 - ox) / resolution
    cdef double sy1 = (y1 - oy) / resolution
    cdef double dx = sx1 - sx0, dy = sy1 - sy0
    cdef double mn, mx, t0, t1, ta, tb
    cdef Py_ssize_t ix0, ix1, iy0, iy1, ix, iy
    cdef bint hit = False
    mn = sx0 if sx0 < sx1 else sx1
    mx = sx0 if sx0 > sx1 else sx1
    ix0 = <Py_ssize_t>floor(mn)
    ix1 = <Py_ssize_t>floor(mx)
    if ix0 < 0: ix0 = 0
    if ix1 > w - 1: ix1 = w - 1
    mn = sy0 if sy0 < sy1 else sy1
    mx = sy0 if sy0 > sy1 else sy1
    iy0 = <Py_ssize_t>floor(mn)
    iy1 = <Py_ssize_t>floor(mx)
    if iy0 < 0: iy0 = 0
    if iy1 > h - 1: iy1 = h - 1
    if ix0 > ix1 or iy0 > iy1:
        return False
    with nogil:
        for iy in range(iy0, iy1 + 1):
            if hit:
                break
            for ix in range(ix0, ix1 + 1):
                if g[iy, ix] == 0:
                    continue
                t0 = 0.0
                t1 = 1.0
                if dx == 0.0:
                    if sx0 < ix or sx0 > ix + 1.0:
                        continue
                else:
                    ta = (ix - sx0) / dx
                    tb = (ix + 1.0 - sx0) / dx
                    if ta < tb:
                        if ta > t0: t0 = ta
                        if tb < t1: t1 = tb
                    else:
                        if tb > t0: t0 = tb
                        if ta < t1: t1 = ta
                if dy == 0.0:
                    if sy0 < iy or sy0 > iy + 1.0:
                        continue
                else:
                    ta = (iy - sy0) / dy
                    tb = (iy + 1.0 - sy0) / dy
                    if ta < tb:
                        if ta > t0: t0 = ta
                        if tb < t1: t1 = tb
                    else:
                        if tb > t0: t0 = tb
                        if ta < t1: t1 = ta
                if t0 <= t1:
                    hit = True
                    break
    return bool(hit)
