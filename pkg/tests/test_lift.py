import numpy as np

from test_synth import single_wall_scene
from tagreg.pipeline import projection_for_pattern
from tagreg.projection import normalize_intensity, project
from tagreg.synth import render_scans
from tagreg.tagdetect import (
    Detection2D,
    adaptive_threshold_search,
    lift_detections,
    observation_from_corners,
)
from tagreg.tagdict import default16


def detect_and_lift():
    spec = single_wall_scene()  # 0.692 m marker on the x = 5 wall
    clouds, gt = render_scans(spec, seed=0)
    img = normalize_intensity(project(clouds[0], projection_for_pattern(spec.pattern)))
    queue, _ = adaptive_threshold_search(img, default16(), scope=64, step=4.0)
    assert queue.ids() == [0]
    lifted = lift_detections(queue.entries, img, clouds[0])
    assert len(lifted) == 1
    return lifted[0][1], gt


def test_lifted_side_lengths_within_one_percent():
    corners3d, _ = detect_and_lift()
    for k in range(4):
        side = np.linalg.norm(corners3d[(k + 1) % 4] - corners3d[k])
        assert abs(side - 0.692) < 0.01 * 0.692


def test_lifted_corners_on_wall_plane():
    corners3d, _ = detect_and_lift()
    assert np.all(np.abs(corners3d[:, 0] - 5.0) < 0.005)


def test_lifted_corners_make_valid_observation():
    corners3d, gt = detect_and_lift()
    obs = observation_from_corners(0, 0, corners3d, 0.692)
    # recovered marker center within a couple of pixels of ground truth
    assert np.linalg.norm(obs.pose.t - gt.marker_poses[0].t) < 0.02


def test_lift_drops_detection_without_range_support():
    spec = single_wall_scene()
    clouds, _ = render_scans(spec, seed=0)
    img = normalize_intensity(project(clouds[0], projection_for_pattern(spec.pattern)))
    # a quad placed over an empty image region has no supporting pixels
    hole = Detection2D(
        tag_id=9,
        corners=np.array([[2.0, 2.0], [10.0, 2.0], [10.0, 10.0], [2.0, 10.0]])[::-1],
    )
    src = img.source_index.copy()
    src[:12, :12] = -1
    img = type(img)(
        params=img.params, intensity=img.intensity, range=img.range, source_index=src
    )
    assert lift_detections([hole], img, clouds[0]) == []
