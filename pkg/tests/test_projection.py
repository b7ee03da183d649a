import numpy as np
import pytest

from tagreg import accel
from tagreg.cloud_io import PointCloud
from tagreg.errors import AllPointsOutOfFrame, NoRangeSupport, OriginPoint
from tagreg.projection import (
    IntensityImage,
    ProjectionParams,
    _project_numpy,
    lift_pixel,
    normalize_intensity,
    project,
    ray_direction,
    round_half_away,
    to_spherical,
    write_pgm,
)

PARAMS = ProjectionParams(
    alpha_a=0.01, alpha_i=0.01, u_offset=50, v_offset=40, width=101, height=81
)


def cloud_of(points, intensity=None):
    points = np.asarray(points, dtype=float)
    if intensity is None:
        intensity = np.full(points.shape[0], 10.0)
    return PointCloud(xyz=points, intensity=np.asarray(intensity, dtype=float))


def test_to_spherical_on_axis():
    assert to_spherical([1.0, 0.0, 0.0]) == (0.0, 0.0, 1.0)


def test_to_spherical_hand_case():
    theta, phi, r = to_spherical([1.0, 1.0, 0.0])
    assert abs(theta - np.pi / 4) < 1e-12
    assert abs(phi) < 1e-12
    assert abs(r - np.sqrt(2.0)) < 1e-12


def test_to_spherical_origin_raises():
    with pytest.raises(OriginPoint):
        to_spherical([0.0, 0.0, 0.0])


def test_round_half_away():
    assert round_half_away(np.array([0.5, -0.5, 1.4, -1.6, 2.5])).tolist() == [
        1.0,
        -1.0,
        1.0,
        -2.0,
        3.0,
    ]


def test_project_single_point_on_axis():
    params = ProjectionParams(0.01, 0.01, 0, 0, 10, 10)
    img = project(cloud_of([[2.0, 0.0, 0.0]], [42.0]), params)
    assert img.source_index[0, 0] == 0
    assert img.intensity[0, 0] == 42.0
    assert img.range[0, 0] == 2.0


def test_project_theta_equals_alpha_lands_next_pixel():
    # theta exactly alpha_a -> u = 1 + u_offset
    theta = PARAMS.alpha_a
    p = [np.cos(theta), np.sin(theta), 0.0]
    img = project(cloud_of([p]), PARAMS)
    assert img.source_index[PARAMS.v_offset, PARAMS.u_offset + 1] == 0


def test_project_collision_keeps_nearest():
    direction = np.array([np.cos(0.003), np.sin(0.003), 0.0])
    img = project(cloud_of([direction * 3.0, direction * 2.0], [1.0, 2.0]), PARAMS)
    v, u = PARAMS.v_offset, PARAMS.u_offset
    assert img.range[v, u] == 2.0
    assert img.source_index[v, u] == 1
    assert img.intensity[v, u] == 2.0


def test_project_collision_tie_keeps_earlier():
    direction = np.array([1.0, 0.0, 0.0])
    img = project(cloud_of([direction * 2.0, direction * 2.0], [5.0, 6.0]), PARAMS)
    assert img.source_index[PARAMS.v_offset, PARAMS.u_offset] == 0


def test_project_pole_points_dropped():
    img = project(cloud_of([[0.0, 0.0, 2.0], [1.0, 0.0, 0.0]]), PARAMS)
    assert img.n_pole == 1
    assert img.valid.sum() == 1


def test_project_out_of_frame_counted():
    params = ProjectionParams(0.001, 0.001, 2, 2, 5, 5)
    img = project(cloud_of([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), params)
    assert img.n_out_of_frame == 1


def test_project_all_out_of_frame_raises():
    params = ProjectionParams(0.001, 0.001, 2, 2, 5, 5)
    with pytest.raises(AllPointsOutOfFrame):
        project(cloud_of([[0.0, 1.0, 0.0]]), params)


def test_project_backends_agree(rng):
    if not accel.JIT_ENABLED:
        pytest.skip("numba backend not active")
    xyz = rng.uniform(-5, 5, (5000, 3))
    intensity = rng.uniform(0, 255, 5000)
    cloud = PointCloud(xyz=xyz, intensity=intensity)
    img_nb = project(cloud, PARAMS)
    out = _project_numpy(xyz, intensity, PARAMS)
    assert np.array_equal(img_nb.source_index, out[2])
    assert np.array_equal(img_nb.range, out[1])
    assert img_nb.n_out_of_frame == out[3]
    assert img_nb.n_pole == out[4]


def test_project_round_trip_ray_and_range(rng):
    xyz = rng.uniform(-4, 4, (2000, 3))
    cloud = PointCloud(xyz=xyz, intensity=np.ones(2000))
    img = project(cloud, PARAMS)
    vs, us = np.nonzero(img.valid)
    limit = max(PARAMS.alpha_a, PARAMS.alpha_i) / np.sqrt(2.0)
    for v, u in list(zip(vs, us))[:200]:
        src = img.source_index[v, u]
        original = xyz[src]
        r = np.linalg.norm(original)
        assert img.range[v, u] == pytest.approx(r, abs=1e-12)
        d = ray_direction(PARAMS, u, v)
        angle = np.arccos(np.clip(np.dot(d, original / r), -1, 1))
        assert angle <= limit * np.sqrt(2.0) + 1e-9  # u and v each off by <= alpha/2


def test_normalize_intensity_range():
    params = ProjectionParams(0.01, 0.01, 1, 1, 3, 3)
    img = project(cloud_of([[1, 0, 0], [np.cos(0.01), np.sin(0.01), 0]], [50.0, 90.0]), params)
    norm = normalize_intensity(img)
    vals = norm.intensity[norm.valid]
    assert vals.min() == 0.0 and vals.max() == 255.0


def test_lift_pixel_exact_center():
    img = project(cloud_of([[3.0, 0.0, 0.0]], [1.0]), PARAMS)
    p = lift_pixel(img, PARAMS.u_offset, PARAMS.v_offset)
    assert np.allclose(p, [3.0, 0.0, 0.0], atol=1e-12)


def test_lift_pixel_zero_angle_ray():
    intensity = np.zeros((5, 5))
    rng_img = np.zeros((5, 5))
    src = np.full((5, 5), -1, dtype=np.int64)
    rng_img[2, 2] = 5.0
    src[2, 2] = 0
    img = IntensityImage(
        params=ProjectionParams(0.01, 0.01, 2, 2, 5, 5),
        intensity=intensity,
        range=rng_img,
        source_index=src,
    )
    assert np.allclose(lift_pixel(img, 2, 2), [5.0, 0.0, 0.0])


def test_lift_pixel_midpoint_interpolation_bounds():
    intensity = np.zeros((3, 5))
    rng_img = np.zeros((3, 5))
    src = np.full((3, 5), -1, dtype=np.int64)
    rng_img[1, 1], src[1, 1] = 2.0, 0
    rng_img[1, 2], src[1, 2] = 4.0, 1
    img = IntensityImage(
        params=ProjectionParams(0.01, 0.01, 2, 1, 5, 3),
        intensity=intensity,
        range=rng_img,
        source_index=src,
    )
    p = lift_pixel(img, 1.5, 1.0)
    assert 2.0 <= np.linalg.norm(p) <= 4.0


def test_lift_pixel_no_support_raises():
    intensity = np.zeros((5, 5))
    src = np.full((5, 5), -1, dtype=np.int64)
    img = IntensityImage(
        params=ProjectionParams(0.01, 0.01, 2, 2, 5, 5),
        intensity=intensity,
        range=np.zeros((5, 5)),
        source_index=src,
    )
    with pytest.raises(NoRangeSupport):
        lift_pixel(img, 2, 2)


def test_write_pgm(tmp_path):
    img = project(cloud_of([[1.0, 0.0, 0.0]]), PARAMS)
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    text = path.read_text().splitlines()
    assert text[0] == "P2"
    assert text[1] == f"{PARAMS.width} {PARAMS.height}"


def test_params_invariants_enforced():
    with pytest.raises(ValueError):
        ProjectionParams(0.0, 0.01, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        ProjectionParams(0.01, 0.01, 10, 0, 10, 10)
