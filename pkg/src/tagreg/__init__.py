"""Marker-based registration of unordered low-overlap LiDAR point clouds.

Scans are projected to intensity images, square fiducial tags are detected
with an adaptive threshold sweep and lifted back to 3D, marker poses are
fitted in closed form, a weighted scan/marker graph provides initial scan
poses by shortest-path propagation, and a factor graph refines all poses and
corner positions by damped least squares.
"""

from .cloud_io import PointCloud, read_cloud, write_cloud, write_merged
from .geometry import Pose, Twist, apply, compose, inverse, pose_ominus, retract
from .pipeline import RegistrationReport, RunConfig, rmse, run_pipeline
from .projection import IntensityImage, ProjectionParams, project
from .tagdetect import MarkerObservation, adaptive_threshold_search, detect_tags
from .tagdict import TagDictionary, default16

__version__ = "0.1.0"

__all__ = [
    "IntensityImage",
    "MarkerObservation",
    "PointCloud",
    "Pose",
    "ProjectionParams",
    "RegistrationReport",
    "RunConfig",
    "TagDictionary",
    "Twist",
    "adaptive_threshold_search",
    "apply",
    "compose",
    "default16",
    "detect_tags",
    "inverse",
    "pose_ominus",
    "project",
    "read_cloud",
    "retract",
    "rmse",
    "run_pipeline",
    "write_cloud",
    "write_merged",
]
