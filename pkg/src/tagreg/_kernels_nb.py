"""Numba @njit hot kernels.

Importing this module requires numba; callers go through the dispatchers in
:mod:`tagreg.projection`, :mod:`tagreg.tagdetect` and :mod:`tagreg.synth`,
which fall back to the NumPy/SciPy twins when numba is unavailable or
disabled (``TAGREG_NO_NUMBA=1``).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def project_scatter_nb(xyz, intensity, alpha_a, alpha_i, u_o, v_o, width, height):
    """Scatter points into the intensity/range image, keeping the nearest return.

    Returns (img_intensity, img_range, src_index, n_out, n_pole, n_origin).
    """
    img_i = np.zeros((height, width), dtype=np.float64)
    img_r = np.zeros((height, width), dtype=np.float64)
    src = np.full((height, width), -1, dtype=np.int64)
    n_out = 0
    n_pole = 0
    n_origin = 0
    pole_limit = 0.5 * math.pi - 2.0 * alpha_i
    for k in range(xyz.shape[0]):
        x = xyz[k, 0]
        y = xyz[k, 1]
        z = xyz[k, 2]
        r = math.sqrt(x * x + y * y + z * z)
        if r <= 0.0:
            n_origin += 1
            continue
        rho = math.sqrt(x * x + y * y)
        phi = math.atan2(z, rho)
        if abs(phi) > pole_limit:
            n_pole += 1
            continue
        theta = math.atan2(y, x)
        ua = theta / alpha_a
        va = phi / alpha_i
        if ua >= 0.0:
            u = int(math.floor(ua + 0.5)) + u_o
        else:
            u = int(math.ceil(ua - 0.5)) + u_o
        if va >= 0.0:
            v = int(math.floor(va + 0.5)) + v_o
        else:
            v = int(math.ceil(va - 0.5)) + v_o
        if u < 0 or u >= width or v < 0 or v >= height:
            n_out += 1
            continue
        if src[v, u] < 0 or r < img_r[v, u]:
            img_i[v, u] = intensity[k]
            img_r[v, u] = r
            src[v, u] = k
    return img_i, img_r, src, n_out, n_pole, n_origin


@njit(cache=True)
def label_components_nb(mask):
    """8-connected component labeling of a boolean mask (two-pass union-find).

    Returns (labels, n_labels) with labels in 1..n_labels, 0 for background.
    """
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent = np.zeros(h * w // 2 + 2, dtype=np.int64)
    next_label = 1
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            best = 0
            # scan the four already-visited 8-neighbors
            for di, dj in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                ni = i + di
                nj = j + dj
                if ni < 0 or nj < 0 or nj >= w:
                    continue
                lab = labels[ni, nj]
                if lab == 0:
                    continue
                # find root with path compression
                root = lab
                while parent[root] != root:
                    root = parent[root]
                while parent[lab] != root:
                    nxt = parent[lab]
                    parent[lab] = root
                    lab = nxt
                if best == 0 or root < best:
                    if best != 0:
                        parent[best] = root
                    best = root
                elif root != best:
                    parent[root] = best
            if best == 0:
                labels[i, j] = next_label
                parent[next_label] = next_label
                next_label += 1
            else:
                labels[i, j] = best
    # flatten unions and renumber densely
    remap = np.zeros(next_label, dtype=np.int64)
    n = 0
    for lab in range(1, next_label):
        root = lab
        while parent[root] != root:
            root = parent[root]
        if remap[root] == 0:
            n += 1
            remap[root] = n
        remap[lab] = remap[root]
    for i in range(h):
        for j in range(w):
            if labels[i, j] != 0:
                labels[i, j] = remap[labels[i, j]]
    return labels, n


@njit(cache=True)
def convex_hull_nb(pts):
    """Andrew monotone chain on (N, 2) float points, returned counter-clockwise.

    Input must be lexicographically sorted by (x, y).
    """
    n = pts.shape[0]
    if n <= 2:
        return pts.copy()
    hull = np.empty((2 * n, 2), dtype=np.float64)
    k = 0
    for idx in range(n):
        while k >= 2:
            ox = hull[k - 1, 0] - hull[k - 2, 0]
            oy = hull[k - 1, 1] - hull[k - 2, 1]
            px = pts[idx, 0] - hull[k - 2, 0]
            py = pts[idx, 1] - hull[k - 2, 1]
            if ox * py - oy * px <= 0.0:
                k -= 1
            else:
                break
        hull[k] = pts[idx]
        k += 1
    lower = k + 1
    for idx in range(n - 2, -1, -1):
        while k >= lower:
            ox = hull[k - 1, 0] - hull[k - 2, 0]
            oy = hull[k - 1, 1] - hull[k - 2, 1]
            px = pts[idx, 0] - hull[k - 2, 0]
            py = pts[idx, 1] - hull[k - 2, 1]
            if ox * py - oy * px <= 0.0:
                k -= 1
            else:
                break
        hull[k] = pts[idx]
        k += 1
    return hull[: k - 1].copy()


@njit(cache=True)
def raycast_nb(
    origin,
    dirs,
    plane_origin,
    plane_normal,
    plane_u,
    plane_v,
    plane_half,
    plane_intensity,
    marker_plane,
    marker_origin,
    marker_x,
    marker_y,
    marker_side,
    marker_bright,
    marker_dark,
    marker_cells,
):
    """Intersect every ray with the nearest front-facing plane.

    Returns (t, intensity, hit) arrays over rays.  Marker patterns override
    the host plane intensity inside their square.
    """
    n_rays = dirs.shape[0]
    n_planes = plane_origin.shape[0]
    n_markers = marker_origin.shape[0]
    t_out = np.zeros(n_rays, dtype=np.float64)
    i_out = np.zeros(n_rays, dtype=np.float64)
    hit = np.zeros(n_rays, dtype=np.bool_)
    cells_n = marker_cells.shape[1]
    for k in range(n_rays):
        best_t = np.inf
        best_plane = -1
        for p in range(n_planes):
            denom = (
                dirs[k, 0] * plane_normal[p, 0]
                + dirs[k, 1] * plane_normal[p, 1]
                + dirs[k, 2] * plane_normal[p, 2]
            )
            if denom >= -1e-12:  # back side or parallel
                continue
            dx = plane_origin[p, 0] - origin[0]
            dy = plane_origin[p, 1] - origin[1]
            dz = plane_origin[p, 2] - origin[2]
            t = (
                dx * plane_normal[p, 0] + dy * plane_normal[p, 1] + dz * plane_normal[p, 2]
            ) / denom
            if t <= 1e-6 or t >= best_t:
                continue
            hx = origin[0] + t * dirs[k, 0] - plane_origin[p, 0]
            hy = origin[1] + t * dirs[k, 1] - plane_origin[p, 1]
            hz = origin[2] + t * dirs[k, 2] - plane_origin[p, 2]
            cu = hx * plane_u[p, 0] + hy * plane_u[p, 1] + hz * plane_u[p, 2]
            cv = hx * plane_v[p, 0] + hy * plane_v[p, 1] + hz * plane_v[p, 2]
            if abs(cu) > plane_half[p, 0] or abs(cv) > plane_half[p, 1]:
                continue
            best_t = t
            best_plane = p
        if best_plane < 0:
            continue
        hit[k] = True
        t_out[k] = best_t
        value = plane_intensity[best_plane]
        px = origin[0] + best_t * dirs[k, 0]
        py = origin[1] + best_t * dirs[k, 1]
        pz = origin[2] + best_t * dirs[k, 2]
        for m in range(n_markers):
            if marker_plane[m] != best_plane:
                continue
            mx = px - marker_origin[m, 0]
            my = py - marker_origin[m, 1]
            mz = pz - marker_origin[m, 2]
            qx = mx * marker_x[m, 0] + my * marker_x[m, 1] + mz * marker_x[m, 2]
            qy = mx * marker_y[m, 0] + my * marker_y[m, 1] + mz * marker_y[m, 2]
            half = 0.5 * marker_side[m]
            if abs(qx) > half or abs(qy) > half:
                continue
            col = int((qx + half) / marker_side[m] * cells_n)
            row = int((qy + half) / marker_side[m] * cells_n)
            if col < 0:
                col = 0
            if col >= cells_n:
                col = cells_n - 1
            if row < 0:
                row = 0
            if row >= cells_n:
                row = cells_n - 1
            value = marker_bright[m] if marker_cells[m, row, col] else marker_dark[m]
            break
        i_out[k] = value
    return t_out, i_out, hit
