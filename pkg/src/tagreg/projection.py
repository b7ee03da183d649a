"""Spherical projection of a cloud to an intensity image and the reverse lift.

Pixel model (azimuth theta, inclination phi, round-half-away-from-zero):

    u = round(theta / alpha_a) + u_offset
    v = round(phi / alpha_i) + v_offset

Pixel collisions keep the smaller range (foreground occludes background; ties
keep the earlier point).  Points within ``2 * alpha_i`` of the poles are
discarded, azimuth being undefined there.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import accel
from .cloud_io import PointCloud
from .errors import AllPointsOutOfFrame, IoError, NoRangeSupport, OriginPoint

if accel.HAS_NUMBA:
    from ._kernels_nb import project_scatter_nb


@dataclass(frozen=True)
class ProjectionParams:
    """Angular resolutions (rad/pixel), pixel offsets, and image size."""

    alpha_a: float
    alpha_i: float
    u_offset: int
    v_offset: int
    width: int
    height: int

    def __post_init__(self):
        if self.alpha_a <= 0 or self.alpha_i <= 0:
            raise ValueError("angular resolutions must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.u_offset < self.width):
            raise ValueError("u_offset must lie in [0, width)")
        if not (0 <= self.v_offset < self.height):
            raise ValueError("v_offset must lie in [0, height)")


@dataclass(frozen=True)
class IntensityImage:
    """Per-pixel intensity, range and source point index (-1 where empty)."""

    params: ProjectionParams
    intensity: np.ndarray
    range: np.ndarray
    source_index: np.ndarray
    n_out_of_frame: int = 0
    n_pole: int = 0
    n_origin: int = 0

    @property
    def width(self) -> int:
        return self.params.width

    @property
    def height(self) -> int:
        return self.params.height

    @property
    def valid(self) -> np.ndarray:
        return self.source_index >= 0


def to_spherical(p: np.ndarray) -> tuple[float, float, float]:
    """(theta, phi, r) of a single point; raises OriginPoint at r == 0."""
    x, y, z = (float(p[0]), float(p[1]), float(p[2]))
    r = float(np.sqrt(x * x + y * y + z * z))
    if r <= 0.0:
        raise OriginPoint("spherical angles undefined at the origin")
    theta = float(np.arctan2(y, x))
    phi = float(np.arctan2(z, np.hypot(x, y)))
    return theta, phi, r


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with halves away from zero (vectorized)."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))


def _project_numpy(xyz, intensity, params: ProjectionParams):
    r = np.linalg.norm(xyz, axis=1)
    rho = np.hypot(xyz[:, 0], xyz[:, 1])
    keep = r > 0.0
    n_origin = int(np.sum(~keep))
    phi = np.zeros_like(r)
    phi[keep] = np.arctan2(xyz[keep, 2], rho[keep])
    pole = keep & (np.abs(phi) > 0.5 * np.pi - 2.0 * params.alpha_i)
    n_pole = int(np.sum(pole))
    keep &= ~pole
    theta = np.arctan2(xyz[:, 1], xyz[:, 0])
    u = round_half_away(theta / params.alpha_a).astype(np.int64) + params.u_offset
    v = round_half_away(phi / params.alpha_i).astype(np.int64) + params.v_offset
    inside = keep & (u >= 0) & (u < params.width) & (v >= 0) & (v < params.height)
    n_out = int(np.sum(keep & ~inside))

    img_i = np.zeros((params.height, params.width))
    img_r = np.zeros((params.height, params.width))
    src = np.full((params.height, params.width), -1, dtype=np.int64)
    idx = np.nonzero(inside)[0]
    if idx.size:
        pix = v[idx] * params.width + u[idx]
        # sort by (pixel, range, point index): first entry per pixel wins
        order = np.lexsort((idx, r[idx], pix))
        pix_sorted = pix[order]
        first = np.ones(pix_sorted.size, dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        winners = idx[order][first]
        flat_pix = pix_sorted[first]
        img_i.reshape(-1)[flat_pix] = intensity[winners]
        img_r.reshape(-1)[flat_pix] = r[winners]
        src.reshape(-1)[flat_pix] = winners
    return img_i, img_r, src, n_out, n_pole, n_origin


def project(cloud: PointCloud, params: ProjectionParams) -> IntensityImage:
    """Project a cloud into an intensity image with a range buffer."""
    xyz = np.ascontiguousarray(cloud.xyz, dtype=np.float64)
    intensity = np.ascontiguousarray(cloud.intensity, dtype=np.float64)
    if accel.JIT_ENABLED:
        out = project_scatter_nb(
            xyz,
            intensity,
            params.alpha_a,
            params.alpha_i,
            params.u_offset,
            params.v_offset,
            params.width,
            params.height,
        )
    else:
        out = _project_numpy(xyz, intensity, params)
    img_i, img_r, src, n_out, n_pole, n_origin = out
    if not np.any(src >= 0):
        raise AllPointsOutOfFrame(
            f"scan {cloud.scan_id}: no point landed inside the {params.width}x{params.height} frame"
        )
    return IntensityImage(
        params=params,
        intensity=img_i,
        range=img_r,
        source_index=src,
        n_out_of_frame=n_out,
        n_pole=n_pole,
        n_origin=n_origin,
    )


def normalize_intensity(img: IntensityImage) -> IntensityImage:
    """Min-max scale valid intensities to [0, 255]; empty pixels stay 0."""
    valid = img.valid
    out = np.zeros_like(img.intensity)
    if np.any(valid):
        lo = float(img.intensity[valid].min())
        hi = float(img.intensity[valid].max())
        if hi > lo:
            out[valid] = (img.intensity[valid] - lo) / (hi - lo) * 255.0
    return replace(img, intensity=out)


def ray_direction(params: ProjectionParams, u: float, v: float) -> np.ndarray:
    """Unit direction of the ray through (possibly subpixel) image coords."""
    theta = (u - params.u_offset) * params.alpha_a
    phi = (v - params.v_offset) * params.alpha_i
    return np.array(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)]
    )


def lift_pixel(img: IntensityImage, u: float, v: float, window: int = 1) -> np.ndarray:
    """3D point on the ray through (u, v) at the locally interpolated range.

    Range is inverse-distance interpolated from valid pixels within
    ``window + 0.5`` pixels of (u, v); a pixel-exact hit returns its stored
    range unchanged.
    """
    u0 = int(np.floor(u))
    v0 = int(np.floor(v))
    radius = window + 0.5
    best_d = np.inf
    best_r = 0.0
    wsum = 0.0
    rsum = 0.0
    for vi in range(max(v0 - window, 0), min(v0 + window + 2, img.height)):
        for ui in range(max(u0 - window, 0), min(u0 + window + 2, img.width)):
            if img.source_index[vi, ui] < 0:
                continue
            d = float(np.hypot(ui - u, vi - v))
            if d > radius:
                continue
            if d < best_d:
                best_d = d
                best_r = float(img.range[vi, ui])
            if d < 1e-9:
                continue
            w = 1.0 / (d * d)
            wsum += w
            rsum += w * img.range[vi, ui]
    if not np.isfinite(best_d):
        raise NoRangeSupport(f"no valid range within {radius} px of ({u:.2f}, {v:.2f})")
    rng = best_r if best_d < 1e-9 else rsum / wsum
    return ray_direction(img.params, u, v) * rng


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through (N, 3) points: (centroid, unit normal)."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 3:
        raise NoRangeSupport("plane fit needs at least 3 points")
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[1] < 1e-12 * max(eigval[2], 1.0):
        raise NoRangeSupport("plane fit degenerate: points nearly collinear")
    return centroid, eigvec[:, 0]


def intersect_ray_plane(
    direction: np.ndarray, centroid: np.ndarray, normal: np.ndarray
) -> np.ndarray:
    """Intersection of the ray t*direction (t > 0) with the plane."""
    denom = float(np.dot(direction, normal))
    if abs(denom) < 1e-12:
        raise NoRangeSupport("corner ray is parallel to the marker plane")
    t = float(np.dot(centroid, normal)) / denom
    if t <= 0.0:
        raise NoRangeSupport("marker plane lies behind the sensor")
    return t * np.asarray(direction, dtype=float)


def write_pgm(img: IntensityImage, path) -> None:
    """Debug dump of the intensity channel as ASCII PGM (P2)."""
    valid = img.valid
    vals = np.zeros_like(img.intensity)
    if np.any(valid):
        lo = float(img.intensity[valid].min())
        hi = float(img.intensity[valid].max())
        if hi > lo:
            vals[valid] = (img.intensity[valid] - lo) / (hi - lo) * 255.0
    grid = np.rint(vals).astype(int)
    lines = ["P2", f"{img.width} {img.height}", "255"]
    for row in grid:
        lines.append(" ".join(str(v) for v in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
