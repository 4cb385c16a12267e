"""Pure-numpy kernel implementations.

This module is the behavioral reference for the compiled extension in
``_core.pyx``: both use the same float64 formulas, evaluation order and
tie rules, so results are bit-identical and either can back the package.

Rectangle arrays follow geometry.pack_rects: axes (K,) int32 normal
axes, params (K, 5) float64 rows [offset, u_lo, u_hi, v_lo, v_hi].
"""

from __future__ import annotations

import numpy as np

from ..geometry import AXIS_UV

IMPL = "numpy"


# ---------------- ray casting ----------------

def min_hit_param(origin, dirs, axes, params, t_lo):
    """Per-ray minimum hit parameter t >= t_lo over all rectangles.

    Rays are origin + t * dirs[i]; rays parallel to a rectangle's plane
    never hit it (in-plane rays are a degenerate miss). Returns (M,)
    float64 with +inf where nothing is hit.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(axes.shape[0]):
            ax = int(axes[k])
            ua, va = AXIS_UV[ax]
            offset, u_lo, u_hi, v_lo, v_hi = params[k]
            t = (offset - origin[ax]) / dirs[:, ax]
            pu = origin[ua] + t * dirs[:, ua]
            pv = origin[va] + t * dirs[:, va]
            ok = (
                (t >= t_lo)
                & (t < best)
                & (pu >= u_lo)
                & (pu <= u_hi)
                & (pv >= v_lo)
                & (pv <= v_hi)
            )
            best[ok] = t[ok]
    return best


def _dot3(v, w):
    # explicit left-associated sum: bit-identical to the C kernels
    return v[0] * w[0] + v[1] * w[1] + v[2] * w[2]


def _clip_project_bbox(origin, right, up, fwd, tan_h, tan_v, width, height, corners, near):
    """Pixel bounding box of a rectangle, conservative by one pixel.

    Clips the corner quad against the z_cam >= near half-space, projects
    the surviving polygon and takes the padded bbox of the projections.
    Returns None when the whole rectangle is behind the near plane.
    """
    rel = [corners[i] - origin for i in range(4)]
    z = [_dot3(rel[i], fwd) for i in range(4)]
    verts = []  # (x_cam, y_cam, z_cam) triples
    for i in range(4):
        j = (i + 1) % 4
        if z[i] >= near:
            verts.append((_dot3(rel[i], right), _dot3(rel[i], up), z[i]))
        if (z[i] >= near) != (z[j] >= near):
            s = (near - z[i]) / (z[j] - z[i])
            v = [rel[i][c] + s * (rel[j][c] - rel[i][c]) for c in range(3)]
            verts.append((_dot3(v, right), _dot3(v, up), z[i] + s * (z[j] - z[i])))
    if not verts:
        return None
    px = [(vx / (vz * tan_h) + 1.0) * (0.5 * width) for vx, _, vz in verts]
    py = [(1.0 - vy / (vz * tan_v)) * (0.5 * height) for _, vy, vz in verts]
    x0 = max(int(np.floor(min(px))) - 1, 0)
    x1 = min(int(np.ceil(max(px))) + 1, width - 1)
    y0 = max(int(np.floor(min(py))) - 1, 0)
    y1 = min(int(np.ceil(max(py))) + 1, height - 1)
    if x0 > x1 or y0 > y1:
        return None
    return x0, x1, y0, y1


def depth_buffer(origin, right, up, fwd, tan_h, tan_v, width, height, axes, params, corners, near):
    """Forward-depth buffer over pixel-center rays.

    Pixel rays are fwd + a*right + b*up with unit forward component, so
    the hit parameter t equals perpendicular (camera-forward) depth.
    `corners` is the (K, 4, 3) corner array of the packed rectangles.
    Returns (height, width) float64, +inf for misses.
    """
    buf = np.full((height, width), np.inf)
    col_a = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * tan_h
    row_b = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * tan_v
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(axes.shape[0]):
            bbox = _clip_project_bbox(
                origin, right, up, fwd, tan_h, tan_v, width, height, corners[k], near
            )
            if bbox is None:
                continue
            x0, x1, y0, y1 = bbox
            ax = int(axes[k])
            ua, va = AXIS_UV[ax]
            offset, u_lo, u_hi, v_lo, v_hi = params[k]
            a = col_a[x0 : x1 + 1][None, :]
            b = row_b[y0 : y1 + 1][:, None]
            d_ax = fwd[ax] + a * right[ax] + b * up[ax]
            d_ua = fwd[ua] + a * right[ua] + b * up[ua]
            d_va = fwd[va] + a * right[va] + b * up[va]
            t = (offset - origin[ax]) / d_ax
            pu = origin[ua] + t * d_ua
            pv = origin[va] + t * d_va
            block = buf[y0 : y1 + 1, x0 : x1 + 1]
            ok = (
                (t >= near)
                & (t < block)
                & (pu >= u_lo)
                & (pu <= u_hi)
                & (pv >= v_lo)
                & (pv <= v_hi)
            )
            block[ok] = np.broadcast_to(t, block.shape)[ok]
    return buf


# ---------------- point-set kernels ----------------

def fps(positions, k, start):
    """Greedy maximin farthest point sampling.

    Each pick maximizes squared distance to the chosen set; ties break
    to the lowest index (argmax returns the first maximum).
    """
    n = positions.shape[0]
    sel = np.empty(k, dtype=np.int64)
    sel[0] = start
    d = np.full(n, np.inf)
    last = start
    for i in range(1, k):
        dx = positions[:, 0] - positions[last, 0]
        dy = positions[:, 1] - positions[last, 1]
        dz = positions[:, 2] - positions[last, 2]
        np.minimum(d, dx * dx + dy * dy + dz * dz, out=d)
        last = int(np.argmax(d))
        sel[i] = last
    return sel


def ball_query(positions, centroids, radius, max_k):
    """Up to max_k in-radius neighbors per centroid, (distance, index) order.

    Empty balls fall back to the single nearest point. Returns (C, max_k)
    int64 padded with -1.
    """
    r2 = float(radius) * float(radius)
    out = np.full((centroids.shape[0], max_k), -1, dtype=np.int64)
    for ci in range(centroids.shape[0]):
        dx = positions[:, 0] - centroids[ci, 0]
        dy = positions[:, 1] - centroids[ci, 1]
        dz = positions[:, 2] - centroids[ci, 2]
        d2 = dx * dx + dy * dy + dz * dz
        idx = np.nonzero(d2 <= r2)[0]
        if idx.size == 0:
            out[ci, 0] = int(np.argmin(d2))
        else:
            take = idx[np.lexsort((idx, d2[idx]))][:max_k]
            out[ci, : take.shape[0]] = take
    return out


# ---------------- grid line of sight ----------------

def segment_blocked(blocked, ox, oy, resolution, x0, y0, x1, y1):
    """True iff the closed segment touches any blocked cell (closed cells).

    Liang-Barsky interval test against every cell in the segment's cell
    bounding box; a single-point touch (corner/edge graze) counts.
    """
    sx0 = (x0 - ox) / resolution
    sy0 = (y0 - oy) / resolution
    sx1 = (x1 - ox) / resolution
    sy1 = (y1 - oy) / resolution
    h, w = blocked.shape
    ix0 = max(int(np.floor(min(sx0, sx1))), 0)
    ix1 = min(int(np.floor(max(sx0, sx1))), w - 1)
    iy0 = max(int(np.floor(min(sy0, sy1))), 0)
    iy1 = min(int(np.floor(max(sy0, sy1))), h - 1)
    if ix0 > ix1 or iy0 > iy1:
        return False
    sub = blocked[iy0 : iy1 + 1, ix0 : ix1 + 1]
    if not sub.any():
        return False
    dx = sx1 - sx0
    dy = sy1 - sy0
    cx = np.arange(ix0, ix1 + 1, dtype=np.float64)[None, :]
    cy = np.arange(iy0, iy1 + 1, dtype=np.float64)[:, None]
    t0 = np.zeros(sub.shape)
    t1 = np.ones(sub.shape)
    inside = np.ones(sub.shape, dtype=bool)
    if dx == 0.0:
        inside &= (sx0 >= cx) & (sx0 <= cx + 1.0)
    else:
        ta = (cx - sx0) / dx
        tb = (cx + 1.0 - sx0) / dx
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    if dy == 0.0:
        inside &= (sy0 >= cy) & (sy0 <= cy + 1.0)
    else:
        ta = (cy - sy0) / dy
        tb = (cy + 1.0 - sy0) / dy
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    touched = inside & (t0 <= t1)
    return bool((touched & (sub != 0)).any())
