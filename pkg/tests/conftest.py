"""Shared test helpers: random rigid transforms and a 2D tag render oracle."""

from __future__ import annotations

import numpy as np
import pytest

from tagreg.geometry import Pose, exp_rotation
from tagreg.projection import IntensityImage, ProjectionParams
from tagreg.tagdict import cells_from_code


def random_axis(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_rotation(rng, max_angle: float = np.pi - 0.01) -> np.ndarray:
    angle = rng.uniform(0.0, max_angle)
    return exp_rotation(angle * random_axis(rng))


def random_pose(rng, trans_scale: float = 1.0, max_angle: float = np.pi - 0.01) -> Pose:
    return Pose(random_rotation(rng, max_angle), rng.uniform(-trans_scale, trans_scale, 3))


def image_from_array(arr: np.ndarray) -> IntensityImage:
    """Wrap a plain 2D intensity array for detector-only tests."""
    arr = np.asarray(arr, dtype=float)
    h, w = arr.shape
    params = ProjectionParams(
        alpha_a=1e-3, alpha_i=1e-3, u_offset=w // 2, v_offset=h // 2, width=w, height=h
    )
    return IntensityImage(
        params=params,
        intensity=arr,
        range=np.ones_like(arr),
        source_index=np.arange(arr.size).reshape(arr.shape),
    )


def tag_homography(
    scale: float,
    offset: tuple[float, float],
    tilt_deg: float = 0.0,
    roll_deg: float = 0.0,
) -> np.ndarray:
    """Homography from unit tag coordinates to image pixels.

    Models a pinhole view of the tag plane tilted by ``tilt_deg`` about the
    vertical axis and rolled in-plane by ``roll_deg``.  The horizontal image
    axis is mirrored the same way the azimuth axis of the LiDAR intensity
    image mirrors the marker frame, so canonical corner order appears
    clockwise in (u, v).
    """
    tilt = np.deg2rad(tilt_deg)
    roll = np.deg2rad(roll_deg)
    depth = 5.0
    f = scale * depth
    corners_img = []
    for qx, qy in ((0, 0), (1, 0), (1, 1), (0, 1)):
        x, y = qx - 0.5, qy - 0.5
        xr = np.cos(roll) * x - np.sin(roll) * y
        yr = np.sin(roll) * x + np.cos(roll) * y
        px = np.cos(tilt) * xr
        pz = depth + np.sin(tilt) * xr
        py = yr
        corners_img.append((offset[0] - f * px / pz, offset[1] + f * py / pz))
    from tagreg.tagdetect import _homography_unit_square

    return _homography_unit_square(np.array(corners_img, dtype=float))


def render_tag_intensity(
    h_matrix: np.ndarray,
    code: int,
    grid_n: int,
    shape: tuple[int, int],
    bg: float = 150.0,
    bright: float = 200.0,
    dark: float = 20.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Render a tag through the homography; returns (intensity, gt_corners)."""
    cells = cells_from_code(code, grid_n)
    n_cells = grid_n + 2
    height, width = shape
    uu, vv = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
    q = pix @ np.linalg.inv(h_matrix).T
    qx = q[:, 0] / q[:, 2]
    qy = q[:, 1] / q[:, 2]
    inside = (qx >= 0) & (qx < 1) & (qy >= 0) & (qy < 1)
    img = np.full(uu.size, bg)
    col = np.clip((qx[inside] * n_cells).astype(int), 0, n_cells - 1)
    row = np.clip((qy[inside] * n_cells).astype(int), 0, n_cells - 1)
    img[inside] = np.where(cells[row, col] > 0, bright, dark)
    corners = []
    for sx, sy in ((0, 0), (1, 0), (1, 1), (0, 1)):
        w = h_matrix @ np.array([sx, sy, 1.0])
        corners.append(w[:2] / w[2])
    return img.reshape(shape), np.array(corners)


def make_chain_scene(rng, n_scans=3, side=0.5, noise=0.0, trans_scale=2.0, dense=False):
    """Ground-truth multi-scan scene: scans k and k+1 share marker k.

    With ``dense=True`` every scan observes every marker (loop closures give
    the optimizer redundancy to exploit).  Corner observations get i.i.d.
    Gaussian noise of the given sigma.
    """
    from tagreg.geometry import apply, compose, inverse
    from tagreg.pose_svd import canonical_corners, solve_marker_pose
    from tagreg.tagdetect import MarkerObservation

    scan_poses = {0: Pose(np.eye(3), np.zeros(3))}
    for i in range(1, n_scans):
        scan_poses[i] = random_pose(rng, trans_scale=trans_scale, max_angle=1.2)
    marker_poses = {j: random_pose(rng, trans_scale=trans_scale) for j in range(n_scans - 1)}
    base = canonical_corners(side)
    observations = []
    for j in marker_poses:
        scans = sorted(scan_poses) if dense else (j, j + 1)
        for i in scans:
            rel = compose(inverse(scan_poses[i]), marker_poses[j])
            corners = apply(rel, base)
            if noise > 0:
                corners = corners + rng.normal(0.0, noise, (4, 3))
            pose, e_pp = solve_marker_pose(base, corners)
            observations.append(
                MarkerObservation(
                    marker_id=j, scan_id=i, corners3d=corners, pose=pose, e_pp=e_pp
                )
            )
    return scan_poses, marker_poses, observations


def corridor_scene(
    n_scans=5,
    range_sigma=0.0,
    intensity_sigma=0.0,
    alpha=0.002,
    markers_per_hop=1,
    marker_side=0.9,
):
    """Stations along a corridor, each seeing its own wall plus the shared
    marker panels toward its neighbors.

    Adjacent scans overlap only on the small marker panels between them (well
    under 15% of either scan's returns); scans further apart share nothing.
    Scan k sees the markers of hops k-1 and k, chaining all stations together;
    ``markers_per_hop=2`` stacks two panels per hop so the factor graph has
    redundancy beyond the single propagation path.
    """
    from tagreg.synth import (
        MarkerPlacement,
        PlaneSpec,
        ScanPattern,
        SceneNoise,
        SceneSpec,
        sensor_pose_from_lookat,
    )

    spacing = 12.0
    planes = []
    markers = []
    sensors = []
    for k in range(n_scans):
        planes.append(
            PlaneSpec(
                name=f"wall{k}",
                origin=np.array([spacing * k, 8.0, 0.0]),
                normal=np.array([0.0, -1.0, 0.0]),
                half_u=3.0,
                half_v=2.0,
                intensity=150.0,
            )
        )
        sensors.append(
            sensor_pose_from_lookat([spacing * k, 0.0, 0.0], [spacing * k, 6.0, 0.0])
        )
    heights = [0.0] if markers_per_hop == 1 else [-1.0, 1.0]
    for k in range(n_scans - 1):
        for m, z in enumerate(heights):
            name = f"panel{k}_{m}"
            planes.append(
                PlaneSpec(
                    name=name,
                    origin=np.array([spacing * k + spacing / 2, 7.2, z]),
                    normal=np.array([0.0, -1.0, 0.0]),
                    half_u=0.8,
                    half_v=0.8,
                    intensity=150.0,
                )
            )
            markers.append(
                MarkerPlacement(marker_id=markers_per_hop * k + m, plane=name, side=marker_side)
            )
    pattern = ScanPattern(
        theta_min=-0.785, theta_max=0.785, phi_min=-0.30, phi_max=0.30,
        alpha_a=alpha, alpha_i=alpha,
    )
    return SceneSpec(
        planes=planes,
        markers=markers,
        sensor_poses=sensors,
        pattern=pattern,
        noise=SceneNoise(range_sigma=range_sigma, intensity_sigma=intensity_sigma),
    )


def disjoint_threshold_scene():
    """One scan of two markers whose decodable threshold ranges are disjoint.

    Marker 2 spans dark/bright 10/80, marker 6 spans 120/240, both on bright
    panels, so no single threshold decodes both.
    """
    from tagreg.synth import (
        MarkerPlacement,
        PlaneSpec,
        ScanPattern,
        SceneSpec,
        sensor_pose_from_lookat,
    )

    planes = [
        PlaneSpec(
            name="left",
            origin=np.array([5.0, 1.2, 0.0]),
            normal=np.array([-1.0, 0.0, 0.0]),
            half_u=0.8,
            half_v=0.8,
            intensity=250.0,
        ),
        PlaneSpec(
            name="right",
            origin=np.array([5.0, -1.2, 0.0]),
            normal=np.array([-1.0, 0.0, 0.0]),
            half_u=0.8,
            half_v=0.8,
            intensity=250.0,
        ),
    ]
    markers = [
        MarkerPlacement(marker_id=2, plane="left", side=0.692, bright=80.0, dark=10.0),
        MarkerPlacement(marker_id=6, plane="right", side=0.692, bright=240.0, dark=120.0),
    ]
    pattern = ScanPattern(
        theta_min=-0.5, theta_max=0.5, phi_min=-0.25, phi_max=0.25,
        alpha_a=0.0015, alpha_i=0.0015,
    )
    return SceneSpec(
        planes=planes,
        markers=markers,
        sensor_poses=[sensor_pose_from_lookat([0.0, 0.0, 0.0], [5.0, 0.0, 0.0])],
        pattern=pattern,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
