"""Synthetic scene generator: planar walls with printed markers scanned by a
simulated LiDAR on a regular angular grid.

Rays are cast at exact multiples of the angular resolutions, intersected with
the nearest front-facing plane, colored by the marker cell pattern or the
plane background, and perturbed by optional Gaussian range/intensity noise.
Ground truth (scan poses, marker poses, corner positions, per-scan marker
visibility) accompanies every render, and exact corner observations can be
derived from it for oracle tests.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from . import accel
from .cloud_io import PointCloud
from .errors import EmptyScan, FormatError, SceneError
from .geometry import Pose, apply, inverse, parse_pose
from .pose_svd import canonical_corners
from .tagdetect import MarkerObservation, observation_from_corners
from .tagdict import TagDictionary, cells_from_code, resolve_dictionary

if accel.HAS_NUMBA:
    from ._kernels_nb import raycast_nb


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise SceneError("zero-length direction vector")
    return v / n


@dataclass(frozen=True)
class PlaneSpec:
    """Finite rectangular wall patch."""

    name: str
    origin: np.ndarray
    normal: np.ndarray
    half_u: float
    half_v: float
    intensity: float
    u_axis: np.ndarray = None
    v_axis: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        normal = _unit(self.normal)
        object.__setattr__(self, "normal", normal)
        if self.u_axis is None:
            ref = np.array([0.0, 0.0, 1.0])
            if abs(float(np.dot(normal, ref))) > 0.99:
                ref = np.array([0.0, 1.0, 0.0])
            u = np.cross(normal, ref)
        else:
            u = np.asarray(self.u_axis, dtype=float)
            u = u - float(np.dot(u, normal)) * normal
        u = _unit(u)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", np.cross(normal, u))
        if self.half_u <= 0 or self.half_v <= 0:
            raise SceneError(f"plane {self.name}: extents must be positive")


@dataclass(frozen=True)
class MarkerPlacement:
    """Marker glued onto a host plane at in-plane coordinates and yaw."""

    marker_id: int
    plane: str
    side: float
    center_u: float = 0.0
    center_v: float = 0.0
    yaw: float = 0.0
    bright: float = 200.0
    dark: float = 20.0


@dataclass(frozen=True)
class ScanPattern:
    """Regular angular ray grid of the simulated sensor."""

    theta_min: float
    theta_max: float
    phi_min: float
    phi_max: float
    alpha_a: float
    alpha_i: float

    def __post_init__(self):
        if not (-np.pi < self.theta_min < self.theta_max <= np.pi):
            raise SceneError("azimuth FOV must lie within (-pi, pi]")
        if not (-np.pi / 2 < self.phi_min < self.phi_max < np.pi / 2):
            raise SceneError("inclination FOV must lie within (-pi/2, pi/2)")
        if self.alpha_a <= 0 or self.alpha_i <= 0:
            raise SceneError("angular resolutions must be positive")


@dataclass(frozen=True)
class SceneNoise:
    range_sigma: float = 0.0
    intensity_sigma: float = 0.0


@dataclass
class SceneSpec:
    planes: list[PlaneSpec]
    markers: list[MarkerPlacement]
    sensor_poses: list[Pose]
    pattern: ScanPattern
    noise: SceneNoise = SceneNoise()
    dictionary: TagDictionary = None

    def __post_init__(self):
        if self.dictionary is None:
            from .tagdict import default16

            self.dictionary = default16()
        names = {p.name for p in self.planes}
        if len(names) != len(self.planes):
            raise SceneError("duplicate plane names")
        ids = [m.marker_id for m in self.markers]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate marker ids")
        known = {tag_id for tag_id, _ in self.dictionary.codes}
        for m in self.markers:
            if m.plane not in names:
                raise SceneError(f"marker {m.marker_id}: unknown plane {m.plane!r}")
            if m.marker_id not in known:
                raise SceneError(f"marker {m.marker_id} not in the dictionary")
            plane = self.plane(m.plane)
            h = 0.5 * m.side
            reach = h * (abs(np.cos(m.yaw)) + abs(np.sin(m.yaw)))
            if abs(m.center_u) + reach > plane.half_u or abs(m.center_v) + reach > plane.half_v:
                raise SceneError(f"marker {m.marker_id} exceeds plane {m.plane!r} extent")

    def plane(self, name: str) -> PlaneSpec:
        for p in self.planes:
            if p.name == name:
                return p
        raise KeyError(name)


def marker_pose(plane: PlaneSpec, placement: MarkerPlacement) -> Pose:
    """World pose of a marker: z along the plane normal, x rotated by yaw."""
    x_m = np.cos(placement.yaw) * plane.u_axis + np.sin(placement.yaw) * plane.v_axis
    z_m = plane.normal
    y_m = np.cross(z_m, x_m)
    origin = plane.origin + placement.center_u * plane.u_axis + placement.center_v * plane.v_axis
    return Pose(np.column_stack([x_m, y_m, z_m]), origin)


def sensor_pose_from_lookat(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Sensor pose whose x axis (ray grid center) points at the target."""
    position = np.asarray(position, dtype=float)
    x = _unit(np.asarray(target, dtype=float) - position)
    up = _unit(up)
    if abs(float(np.dot(x, up))) > 0.999:
        raise SceneError("look direction too close to the up vector")
    y = _unit(np.cross(up, x))
    z = np.cross(x, y)
    return Pose(np.column_stack([x, y, z]), position)


@dataclass
class GroundTruth:
    scan_poses: dict[int, Pose]
    marker_poses: dict[int, Pose]
    corners: dict[tuple[int, int], np.ndarray]
    visibility: dict[int, list[int]]


def _ray_grid(pattern: ScanPattern) -> np.ndarray:
    """Unit directions on the angular grid, ordered by (phi row, theta col)."""
    i_lo = int(np.ceil(pattern.theta_min / pattern.alpha_a - 1e-9))
    i_hi = int(np.floor(pattern.theta_max / pattern.alpha_a + 1e-9))
    j_lo = int(np.ceil(pattern.phi_min / pattern.alpha_i - 1e-9))
    j_hi = int(np.floor(pattern.phi_max / pattern.alpha_i + 1e-9))
    theta = np.arange(i_lo, i_hi + 1) * pattern.alpha_a
    phi = np.arange(j_lo, j_hi + 1) * pattern.alpha_i
    tt, pp = np.meshgrid(theta, phi)
    dirs = np.stack(
        [np.cos(pp) * np.cos(tt), np.cos(pp) * np.sin(tt), np.sin(pp)], axis=-1
    )
    return dirs.reshape(-1, 3)


def _scene_arrays(spec: SceneSpec):
    planes = spec.planes
    p_origin = np.array([p.origin for p in planes])
    p_normal = np.array([p.normal for p in planes])
    p_u = np.array([p.u_axis for p in planes])
    p_v = np.array([p.v_axis for p in planes])
    p_half = np.array([[p.half_u, p.half_v] for p in planes])
    p_int = np.array([p.intensity for p in planes])
    name_to_idx = {p.name: k for k, p in enumerate(planes)}
    n = spec.dictionary.grid_n
    code_of = dict(spec.dictionary.codes)
    m_plane = np.array([name_to_idx[m.plane] for m in spec.markers], dtype=np.int64)
    m_origin = np.zeros((len(spec.markers), 3))
    m_x = np.zeros((len(spec.markers), 3))
    m_y = np.zeros((len(spec.markers), 3))
    for k, m in enumerate(spec.markers):
        pose = marker_pose(spec.plane(m.plane), m)
        m_origin[k] = pose.t
        m_x[k] = pose.r[:, 0]
        m_y[k] = pose.r[:, 1]
    m_side = np.array([m.side for m in spec.markers])
    m_bright = np.array([m.bright for m in spec.markers])
    m_dark = np.array([m.dark for m in spec.markers])
    if spec.markers:
        m_cells = np.stack([cells_from_code(code_of[m.marker_id], n) for m in spec.markers])
    else:
        m_cells = np.zeros((0, n + 2, n + 2), dtype=np.uint8)
    return (
        p_origin,
        p_normal,
        p_u,
        p_v,
        p_half,
        p_int,
        m_plane,
        m_origin,
        m_x,
        m_y,
        m_side,
        m_bright,
        m_dark,
        m_cells,
    )


def _raycast_numpy(origin, dirs, arrays):
    (
        p_origin,
        p_normal,
        p_u,
        p_v,
        p_half,
        p_int,
        m_plane,
        m_origin,
        m_x,
        m_y,
        m_side,
        m_bright,
        m_dark,
        m_cells,
    ) = arrays
    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_plane = np.full(n_rays, -1, dtype=np.int64)
    for p in range(p_origin.shape[0]):
        denom = dirs @ p_normal[p]
        facing = denom < -1e-12
        t = np.full(n_rays, np.inf)
        t[facing] = float(np.dot(p_origin[p] - origin, p_normal[p])) / denom[facing]
        candidate = facing & (t > 1e-6) & (t < best_t)
        hit_pts = origin + t[candidate, None] * dirs[candidate]
        local = hit_pts - p_origin[p]
        cu = local @ p_u[p]
        cv = local @ p_v[p]
        inside = (np.abs(cu) <= p_half[p, 0]) & (np.abs(cv) <= p_half[p, 1])
        idx = np.nonzero(candidate)[0][inside]
        best_t[idx] = t[idx]
        best_plane[idx] = p
    hit = best_plane >= 0
    intensity = np.zeros(n_rays)
    intensity[hit] = p_int[best_plane[hit]]
    cells_n = m_cells.shape[1]
    # reversed so that earlier markers win, matching the numba kernel's break
    for m in reversed(range(m_origin.shape[0])):
        mask = hit & (best_plane == m_plane[m])
        if not np.any(mask):
            continue
        pts = origin + best_t[mask, None] * dirs[mask]
        rel = pts - m_origin[m]
        qx = rel @ m_x[m]
        qy = rel @ m_y[m]
        half = 0.5 * m_side[m]
        inside = (np.abs(qx) <= half) & (np.abs(qy) <= half)
        if not np.any(inside):
            continue
        col = np.clip(((qx[inside] + half) / m_side[m] * cells_n).astype(int), 0, cells_n - 1)
        row = np.clip(((qy[inside] + half) / m_side[m] * cells_n).astype(int), 0, cells_n - 1)
        vals = np.where(m_cells[m][row, col] > 0, m_bright[m], m_dark[m])
        idx = np.nonzero(mask)[0][inside]
        intensity[idx] = vals
    t_out = np.where(hit, best_t, 0.0)
    return t_out, intensity, hit


def render_scans(spec: SceneSpec, seed: int = 0) -> tuple[list[PointCloud], GroundTruth]:
    """Simulate one scan per sensor pose; deterministic for a given seed."""
    arrays = _scene_arrays(spec)
    dirs = _ray_grid(spec.pattern)
    rng = np.random.default_rng(seed)
    clouds = []
    scan_poses = {}
    for scan_id, pose in enumerate(spec.sensor_poses):
        world_dirs = dirs @ pose.r.T
        if accel.JIT_ENABLED:
            t, intensity, hit = raycast_nb(
                np.ascontiguousarray(pose.t),
                np.ascontiguousarray(world_dirs),
                *[np.ascontiguousarray(a) for a in arrays],
            )
        else:
            t, intensity, hit = _raycast_numpy(pose.t, world_dirs, arrays)
        if not np.any(hit):
            raise EmptyScan(f"sensor {scan_id} sees nothing")
        t = t[hit]
        intensity = intensity[hit]
        local_dirs = dirs[hit]
        if spec.noise.range_sigma > 0:
            t = t + rng.normal(0.0, spec.noise.range_sigma, t.shape)
        if spec.noise.intensity_sigma > 0:
            intensity = np.maximum(
                intensity + rng.normal(0.0, spec.noise.intensity_sigma, intensity.shape), 0.0
            )
        clouds.append(
            PointCloud(
                xyz=local_dirs * t[:, None], intensity=intensity, scan_id=scan_id
            )
        )
        scan_poses[scan_id] = pose

    marker_poses = {}
    corners = {}
    for m in spec.markers:
        pose = marker_pose(spec.plane(m.plane), m)
        marker_poses[m.marker_id] = pose
        world = apply(pose, canonical_corners(m.side))
        for s in range(4):
            corners[(m.marker_id, s + 1)] = world[s]
    visibility = {
        scan_id: _visible_markers(spec, scan_poses[scan_id]) for scan_id in scan_poses
    }
    return clouds, GroundTruth(
        scan_poses=scan_poses,
        marker_poses=marker_poses,
        corners=corners,
        visibility=visibility,
    )


def _visible_markers(spec: SceneSpec, sensor: Pose) -> list[int]:
    """Markers whose four corners fall inside the FOV of a front-facing view.

    Purely geometric (scenes are built without marker occlusion); the margin
    keeps a couple of pixels of quiet zone inside the frame.
    """
    out = []
    inv_pose = inverse(sensor)
    margin_t = 3.0 * spec.pattern.alpha_a
    margin_p = 3.0 * spec.pattern.alpha_i
    for m in spec.markers:
        pose = marker_pose(spec.plane(m.plane), m)
        if float(np.dot(pose.r[:, 2], sensor.t - pose.t)) <= 0:
            continue
        world = apply(pose, canonical_corners(m.side))
        ok = True
        for corner in world:
            local = apply(inv_pose, corner)
            r = float(np.linalg.norm(local))
            if r < 0.1:
                ok = False
                break
            theta = float(np.arctan2(local[1], local[0]))
            phi = float(np.arctan2(local[2], np.hypot(local[0], local[1])))
            if not (
                spec.pattern.theta_min + margin_t <= theta <= spec.pattern.theta_max - margin_t
                and spec.pattern.phi_min + margin_p <= phi <= spec.pattern.phi_max - margin_p
            ):
                ok = False
                break
        if ok:
            out.append(m.marker_id)
    return out


def exact_observations(spec: SceneSpec, gt: GroundTruth) -> list[MarkerObservation]:
    """Noise-free corner observations derived from the ground truth.

    For every visible (scan, marker) pair the world corners are expressed in
    the scan frame and fitted like real detections, yielding exact poses.
    """
    side_of = {m.marker_id: m.side for m in spec.markers}
    out = []
    for scan_id in sorted(gt.scan_poses):
        inv_pose = inverse(gt.scan_poses[scan_id])
        for marker_id in gt.visibility[scan_id]:
            corners = np.vstack(
                [apply(inv_pose, gt.corners[(marker_id, s + 1)]) for s in range(4)]
            )
            out.append(
                observation_from_corners(scan_id, marker_id, corners, side_of[marker_id])
            )
    return out


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split()]


def load_scene(path) -> SceneSpec:
    """Parse a scene description file (key = value lines, bracketed sections).

    Sections: ``[scene]`` (dictionary), ``[pattern]``, one ``[plane NAME]``
    per wall, one ``[marker ID]`` per marker, one ``[sensor N]`` per scan.
    Sensors accept either ``pose = <12 numbers>`` or ``position``/``look_at``.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FormatError(f"cannot read scene file {path}")
    try:
        dictionary = resolve_dictionary(
            parser.get("scene", "dictionary", fallback="default16")
        )
        pat = parser["pattern"]
        theta = _floats(pat["theta"])
        phi = _floats(pat["phi"])
        pattern = ScanPattern(
            theta_min=theta[0],
            theta_max=theta[1],
            phi_min=phi[0],
            phi_max=phi[1],
            alpha_a=float(pat["alpha_a"]),
            alpha_i=float(pat["alpha_i"]),
        )
        noise = SceneNoise(
            range_sigma=float(pat.get("range_sigma", 0.0)),
            intensity_sigma=float(pat.get("intensity_sigma", 0.0)),
        )
        planes = []
        markers = []
        sensors = []
        for section in parser.sections():
            tokens = section.split()
            if tokens[0] == "plane":
                sec = parser[section]
                half = _floats(sec["half_extent"])
                planes.append(
                    PlaneSpec(
                        name=tokens[1],
                        origin=np.array(_floats(sec["origin"])),
                        normal=np.array(_floats(sec["normal"])),
                        half_u=half[0],
                        half_v=half[1],
                        intensity=float(sec["intensity"]),
                        u_axis=np.array(_floats(sec["u_axis"])) if "u_axis" in sec else None,
                    )
                )
            elif tokens[0] == "marker":
                sec = parser[section]
                center = _floats(sec.get("center", "0 0"))
                markers.append(
                    MarkerPlacement(
                        marker_id=int(tokens[1]),
                        plane=sec["plane"],
                        side=float(sec["side"]),
                        center_u=center[0],
                        center_v=center[1],
                        yaw=float(sec.get("yaw", 0.0)),
                        bright=float(sec.get("bright", 200.0)),
                        dark=float(sec.get("dark", 20.0)),
                    )
                )
            elif tokens[0] == "sensor":
                sec = parser[section]
                if "pose" in sec:
                    pose = parse_pose(sec["pose"])
                else:
                    pose = sensor_pose_from_lookat(
                        _floats(sec["position"]),
                        _floats(sec["look_at"]),
                        _floats(sec.get("up", "0 0 1")),
                    )
                sensors.append((int(tokens[1]), pose))
    except (KeyError, ValueError, configparser.Error) as exc:
        raise FormatError(f"scene file {path}: {exc}") from exc
    sensors.sort()
    return SceneSpec(
        planes=planes,
        markers=markers,
        sensor_poses=[pose for _, pose in sensors],
        pattern=pattern,
        noise=noise,
        dictionary=dictionary,
    )
