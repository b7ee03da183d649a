import numpy as np
import pytest

from conftest import corridor_scene
from tagreg import accel
from tagreg.errors import EmptyScan, SceneError
from tagreg.geometry import Pose, apply, inverse
from tagreg.synth import (
    MarkerPlacement,
    PlaneSpec,
    ScanPattern,
    SceneNoise,
    SceneSpec,
    _ray_grid,
    _raycast_numpy,
    _scene_arrays,
    exact_observations,
    load_scene,
    marker_pose,
    render_scans,
    sensor_pose_from_lookat,
)


def single_wall_scene(noise=SceneNoise()):
    planes = [
        PlaneSpec(
            name="wall",
            origin=np.array([5.0, 0.0, 0.0]),
            normal=np.array([-1.0, 0.0, 0.0]),
            half_u=3.0,
            half_v=2.0,
            intensity=120.0,
        )
    ]
    # generic placement: off-center with a small yaw so pixel quantization
    # dithers along the edges instead of biasing all four outward
    markers = [
        MarkerPlacement(
            marker_id=0, plane="wall", side=0.692, center_u=0.0131, center_v=-0.0087, yaw=0.05
        )
    ]
    pattern = ScanPattern(
        theta_min=-0.5, theta_max=0.5, phi_min=-0.3, phi_max=0.3,
        alpha_a=0.0015, alpha_i=0.0015,
    )
    sensors = [sensor_pose_from_lookat([0.0, 0.0, 0.0], [5.0, 0.0, 0.0])]
    return SceneSpec(
        planes=planes, markers=markers, sensor_poses=sensors, pattern=pattern, noise=noise
    )


def test_noise_free_points_on_plane():
    clouds, _ = render_scans(single_wall_scene(), seed=0)
    xyz = clouds[0].xyz
    assert np.all(np.abs(xyz[:, 0] - 5.0) < 1e-12)


def test_marker_pixel_subtense():
    # side 0.692 m at 5 m with 0.0015 rad resolution -> about 92 pixels
    clouds, _ = render_scans(single_wall_scene(), seed=0)
    cloud = clouds[0]
    dark_or_bright = (cloud.intensity != 120.0)
    ys = cloud.xyz[dark_or_bright][:, 1]
    width_rad = np.arctan2(ys.max(), 5.0) - np.arctan2(ys.min(), 5.0)
    assert abs(width_rad / 0.0015 - 92.3) < 3.0


def test_determinism_same_seed():
    spec = single_wall_scene(noise=SceneNoise(range_sigma=0.01, intensity_sigma=3.0))
    a, _ = render_scans(spec, seed=7)
    b, _ = render_scans(spec, seed=7)
    assert np.array_equal(a[0].xyz, b[0].xyz)
    assert np.array_equal(a[0].intensity, b[0].intensity)
    c, _ = render_scans(spec, seed=8)
    assert not np.array_equal(a[0].xyz, c[0].xyz)


def test_backends_agree():
    if not accel.JIT_ENABLED:
        pytest.skip("numba backend not active")
    spec = single_wall_scene()
    arrays = _scene_arrays(spec)
    dirs = _ray_grid(spec.pattern)
    pose = spec.sensor_poses[0]
    world_dirs = dirs @ pose.r.T
    from tagreg._kernels_nb import raycast_nb

    t_nb, i_nb, hit_nb = raycast_nb(
        np.ascontiguousarray(pose.t),
        np.ascontiguousarray(world_dirs),
        *[np.ascontiguousarray(a) for a in arrays],
    )
    t_np, i_np, hit_np = _raycast_numpy(pose.t, world_dirs, arrays)
    assert np.array_equal(hit_nb, hit_np)
    assert np.allclose(t_nb, t_np, atol=1e-12)
    assert np.array_equal(i_nb, i_np)


def test_empty_scan_raises():
    spec = single_wall_scene()
    spec.sensor_poses = [sensor_pose_from_lookat([0.0, 0.0, 0.0], [-5.0, 0.0, 0.0])]
    with pytest.raises(EmptyScan):
        render_scans(spec, seed=0)


def test_marker_must_fit_plane():
    with pytest.raises(SceneError):
        SceneSpec(
            planes=[
                PlaneSpec(
                    name="small",
                    origin=np.zeros(3),
                    normal=np.array([1.0, 0.0, 0.0]),
                    half_u=0.2,
                    half_v=0.2,
                    intensity=100.0,
                )
            ],
            markers=[MarkerPlacement(marker_id=0, plane="small", side=0.692)],
            sensor_poses=[Pose.identity()],
            pattern=ScanPattern(-0.5, 0.5, -0.3, 0.3, 0.01, 0.01),
        )


def test_gt_corners_on_plane_and_visibility():
    spec = corridor_scene(n_scans=3)
    clouds, gt = render_scans(spec, seed=0)
    assert [c.scan_id for c in clouds] == [0, 1, 2]
    # corners lie exactly on the host plane y = 7.2
    for (j, s), corner in gt.corners.items():
        assert abs(corner[1] - 7.2) < 1e-12
    assert gt.visibility[0] == [0]
    assert gt.visibility[1] == [0, 1]
    assert gt.visibility[2] == [1]


def test_low_overlap_by_construction():
    # adjacent scans share only the marker panel: < 15% of either cloud
    spec = corridor_scene(n_scans=2)
    clouds, gt = render_scans(spec, seed=0)
    a = apply(gt.scan_poses[0], clouds[0].xyz)
    b = apply(gt.scan_poses[1], clouds[1].xyz)
    from scipy.spatial import cKDTree

    tree = cKDTree(b)
    d, _ = tree.query(a, k=1, distance_upper_bound=0.05)
    overlap_a = np.mean(np.isfinite(d))
    assert overlap_a < 0.15


def test_exact_observations_match_truth():
    spec = corridor_scene(n_scans=3)
    _, gt = render_scans(spec, seed=0)
    observations = exact_observations(spec, gt)
    assert {(o.scan_id, o.marker_id) for o in observations} == {
        (0, 0), (1, 0), (1, 1), (2, 1),
    }
    for obs in observations:
        assert obs.e_pp < 1e-20
        expected = apply(
            inverse(gt.scan_poses[obs.scan_id]),
            np.vstack([gt.corners[(obs.marker_id, s + 1)] for s in range(4)]),
        )
        assert np.allclose(obs.corners3d, expected, atol=1e-12)


def test_scene_file_round_trip(tmp_path):
    text = """
[scene]
dictionary = default16

[pattern]
theta = -0.5 0.5
phi = -0.3 0.3
alpha_a = 0.0015
alpha_i = 0.0015
range_sigma = 0.002
intensity_sigma = 1.5

[plane wall]
origin = 5 0 0
normal = -1 0 0
half_extent = 3 2
intensity = 120

[marker 4]
plane = wall
center = 0.5 -0.25
yaw = 0.3
side = 0.692
bright = 210
dark = 15

[sensor 0]
position = 0 0 0
look_at = 5 0 0
"""
    path = tmp_path / "scene.ini"
    path.write_text(text)
    spec = load_scene(path)
    assert len(spec.planes) == 1 and len(spec.markers) == 1
    assert spec.markers[0].marker_id == 4
    assert spec.noise.range_sigma == 0.002
    clouds, gt = render_scans(spec, seed=1)
    assert len(clouds) == 1
    assert 4 in gt.marker_poses


def test_marker_pose_frame_is_right_handed():
    plane = PlaneSpec(
        name="w", origin=np.zeros(3), normal=np.array([0.0, -1.0, 0.0]),
        half_u=2.0, half_v=2.0, intensity=100.0,
    )
    pose = marker_pose(plane, MarkerPlacement(marker_id=0, plane="w", side=0.5, yaw=0.4))
    r = pose.r
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    assert np.allclose(r[:, 2], plane.normal)
