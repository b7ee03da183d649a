"""Closed-form marker pose from corner correspondences (Kabsch/SVD) and the
point-to-point fit error used as a graph edge weight."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateCorners
from .geometry import Pose, apply


def canonical_corners(side: float) -> np.ndarray:
    """Marker-frame corners for side length l, counter-clockwise in z=0:
    (-l/2,-l/2), (l/2,-l/2), (l/2,l/2), (-l/2,l/2)."""
    h = 0.5 * side
    return np.array(
        [[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]]
    )


def point_to_point_error(pose: Pose, canonical: np.ndarray, observed: np.ndarray) -> float:
    """Sum of squared distances between transformed canonical and observed corners."""
    diff = apply(pose, canonical) - observed
    return float(np.sum(diff * diff))


def solve_marker_pose(canonical: np.ndarray, observed: np.ndarray) -> tuple[Pose, float]:
    """Least-squares rigid transform mapping canonical corners onto observed ones.

    Kabsch: center both sets, SVD the cross-covariance, correct an improper
    rotation via the determinant guard, recover translation from centroids.
    Returns the pose and its point-to-point error.

    Raises:
        DegenerateCorners: observed corners are collinear or coincident.
    """
    canonical = np.asarray(canonical, dtype=float).reshape(4, 3)
    observed = np.asarray(observed, dtype=float).reshape(4, 3)
    centroid_a = canonical.mean(axis=0)
    centroid_b = observed.mean(axis=0)
    a = canonical - centroid_a
    b = observed - centroid_b
    sv = np.linalg.svd(b, compute_uv=False)
    if sv[1] < 1e-12 * max(sv[0], 1.0):
        raise DegenerateCorners("observed corners are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = float(np.sign(np.linalg.det(v @ u.T)))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = centroid_b - r @ centroid_a
    pose = Pose(r, t)
    return pose, point_to_point_error(pose, canonical, observed)
