"""Binarization, square-tag detection, the adaptive threshold sweep, and the
lift of detected tags to 3D corner observations.

Detection pipeline per binary image: connected components of the dark mask,
convex hull of each component boundary, polygon simplification to a quad,
subpixel corner refinement by intersecting least-squares edge lines (offset
half a pixel outward to the dark/bright crack), homography sampling of the
cell grid, and payload decoding against the dictionary over all four
rotations.  Corner order of a decoded tag is rotation-normalized so the same
physical corner is first in every view.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage

from . import accel
from .cloud_io import PointCloud
from .errors import CornerGeometryError, NoRangeSupport
from .geometry import Pose
from .projection import IntensityImage, fit_plane, intersect_ray_plane, lift_pixel, ray_direction
from .tagdict import TagDictionary

if accel.HAS_NUMBA:
    from ._kernels_nb import convex_hull_nb, label_components_nb

log = logging.getLogger(__name__)

MIN_EDGE_PX = 8.0
MIN_COMPONENT_PX = 16
MAX_COMPONENT_FRACTION = 0.95


@dataclass
class Detection2D:
    """Decoded tag with ordered subpixel corners in image coordinates."""

    tag_id: int
    corners: np.ndarray  # (4, 2) as (u, v), rotation-normalized
    decision_threshold: float = float("nan")

    @property
    def area(self) -> float:
        u, v = self.corners[:, 0], self.corners[:, 1]
        return 0.5 * abs(float(np.dot(u, np.roll(v, -1)) - np.dot(v, np.roll(u, -1))))


@dataclass(frozen=True)
class MarkerObservation:
    """One marker seen in one scan: 3D corners, fitted pose, and fit error."""

    marker_id: int
    scan_id: int
    corners3d: np.ndarray  # (4, 3) in the scan frame, canonical corner order
    pose: Pose  # marker-to-scan transform
    e_pp: float


@dataclass
class MemoryQueue:
    """Markers accumulated over the threshold sweep, one entry per id."""

    entries: list[Detection2D]
    optimal_threshold: float = 0.0

    def ids(self) -> list[int]:
        return [det.tag_id for det in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def binarize(img: IntensityImage, lam: float) -> np.ndarray:
    """Threshold the normalized intensity: 1 where intensity > lam, else 0.

    Empty pixels are always 0.
    """
    return ((img.intensity > lam) & img.valid).astype(np.uint8)


def _label(mask: np.ndarray) -> tuple[np.ndarray, int]:
    if accel.JIT_ENABLED:
        return label_components_nb(mask)
    labels, n = scipy.ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    return labels.astype(np.int64), int(n)


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull of (N, 2) points."""
    if accel.JIT_ENABLED:
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        return convex_hull_nb(np.ascontiguousarray(pts[order], dtype=np.float64))
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(pts)
    except QhullError:
        return pts[:1]
    return pts[hull.vertices]


def _dp_chain(chain: np.ndarray, eps: float) -> list[int]:
    """Douglas-Peucker on an open chain; returns kept indices incl. endpoints."""
    keep = [0, chain.shape[0] - 1]
    stack = [(0, chain.shape[0] - 1)]
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        seg = chain[b] - chain[a]
        norm = np.hypot(seg[0], seg[1])
        if norm < 1e-12:
            continue
        rel = chain[a + 1 : b] - chain[a]
        dist = np.abs(rel[:, 0] * seg[1] - rel[:, 1] * seg[0]) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            mid = a + 1 + k
            keep.append(mid)
            stack.append((a, mid))
            stack.append((mid, b))
    return sorted(set(keep))


def _simplify_to_quad(hull: np.ndarray) -> np.ndarray | None:
    """Reduce a CCW hull polygon to 4 vertices via growing-epsilon DP."""
    m = hull.shape[0]
    if m < 4:
        return None
    if m == 4:
        return hull.copy()
    d2 = np.sum((hull[:, None, :] - hull[None, :, :]) ** 2, axis=2)
    i0, j0 = np.unravel_index(int(np.argmax(d2)), d2.shape)
    if i0 > j0:
        i0, j0 = j0, i0
    chain1 = hull[i0 : j0 + 1]
    chain2 = np.vstack([hull[j0:], hull[: i0 + 1]])
    perimeter = float(np.sum(np.linalg.norm(np.diff(hull, axis=0, append=hull[:1]), axis=1)))
    eps = 0.8
    while eps < 0.3 * perimeter:
        k1 = _dp_chain(chain1, eps)
        k2 = _dp_chain(chain2, eps)
        n_total = len(k1) + len(k2) - 2
        if n_total <= 4:
            if n_total != 4:
                return None
            verts = np.vstack([chain1[k1[:-1]], chain2[k2[:-1]]])
            return verts
        eps *= 1.5
    return None


def _is_convex_cw(quad: np.ndarray) -> bool:
    cross = []
    for k in range(4):
        a = quad[(k + 1) % 4] - quad[k]
        b = quad[(k + 2) % 4] - quad[(k + 1) % 4]
        cross.append(a[0] * b[1] - a[1] * b[0])
    cross = np.array(cross)
    return bool(np.all(cross < 0))


def _ensure_cw(quad: np.ndarray) -> np.ndarray:
    u, v = quad[:, 0], quad[:, 1]
    signed = 0.5 * (np.dot(u, np.roll(v, -1)) - np.dot(v, np.roll(u, -1)))
    return quad[::-1].copy() if signed > 0 else quad


def _refine_corners(quad: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    """Subpixel corners from least-squares edge lines.

    Boundary pixels are centers of the outermost dark pixels; the physical
    edge runs half a pixel outside them, so each fitted line is shifted 0.5 px
    along its outward normal before intersecting adjacent lines.
    """
    centroid = quad.mean(axis=0)
    lines = []
    for k in range(4):
        a, b = quad[k], quad[(k + 1) % 4]
        chord = b - a
        length = float(np.hypot(chord[0], chord[1]))
        direction = chord / length
        rel = boundary - a
        along = rel @ direction
        across = rel[:, 0] * direction[1] - rel[:, 1] * direction[0]
        margin = max(1.5, 0.12 * length)
        inlier = (np.abs(across) <= 1.8) & (along >= margin) & (along <= length - margin)
        pts = boundary[inlier]
        if pts.shape[0] >= 4:
            mean = pts.mean(axis=0)
            centered = pts - mean
            cov = centered.T @ centered
            _, vecs = np.linalg.eigh(cov)
            direction = vecs[:, 1]
            point = mean
        else:
            point = 0.5 * (a + b)
        normal = np.array([-direction[1], direction[0]])
        if np.dot(normal, point - centroid) < 0:
            normal = -normal
        lines.append((point + 0.5 * normal, direction))
    corners = np.empty((4, 2))
    for k in range(4):
        p1, d1 = lines[(k - 1) % 4]
        p2, d2 = lines[k]
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-9:
            corners[k] = quad[k]
            continue
        s = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / denom
        corners[k] = p1 + s * d1
    return corners


def _homography_unit_square(quad: np.ndarray) -> np.ndarray:
    """3x3 map of (0,0),(1,0),(1,1),(0,1) onto the quad corners."""
    src = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((x, y), (xp, yp)) in enumerate(zip(src, quad)):
        a[2 * k] = [x, y, 1, 0, 0, 0, -x * xp, -y * xp]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -x * yp, -y * yp]
        b[2 * k] = xp
        b[2 * k + 1] = yp
    h = np.linalg.solve(a, b)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


_CELL_OFFSETS = np.array([(ox, oy) for oy in (0.3, 0.5, 0.7) for ox in (0.3, 0.5, 0.7)])


def _sample_cells(binary: np.ndarray, quad: np.ndarray, n_cells: int) -> np.ndarray:
    """Mean binary value of each cell sampled on a 3x3 stencil."""
    h = _homography_unit_square(quad)
    cols, rows = np.meshgrid(np.arange(n_cells), np.arange(n_cells))
    base = np.stack([cols.ravel(), rows.ravel()], axis=1)[:, None, :]  # (C, 1, 2)
    q = (base + _CELL_OFFSETS[None, :, :]) / n_cells  # (C, 9, 2)
    flat = q.reshape(-1, 2)
    ones = np.ones((flat.shape[0], 1))
    mapped = np.hstack([flat, ones]) @ h.T
    uv = mapped[:, :2] / mapped[:, 2:3]
    ui = np.rint(uv[:, 0]).astype(int)
    vi = np.rint(uv[:, 1]).astype(int)
    inside = (ui >= 0) & (ui < binary.shape[1]) & (vi >= 0) & (vi < binary.shape[0])
    vals = np.zeros(flat.shape[0])
    vals[inside] = binary[vi[inside], ui[inside]]
    return vals.reshape(n_cells * n_cells, -1).mean(axis=1).reshape(n_cells, n_cells)


def _decode_quad(
    binary: np.ndarray, quad: np.ndarray, dictionary: TagDictionary
) -> tuple[int, np.ndarray] | None:
    n = dictionary.grid_n
    cells = _sample_cells(binary, quad, n + 2)
    border = np.concatenate([cells[0, :], cells[-1, :], cells[1:-1, 0], cells[1:-1, -1]])
    if np.any(border > 0.5):
        return None
    payload = cells[1:-1, 1:-1] > 0.5
    pattern = 0
    for i in range(n):
        for j in range(n):
            if payload[i, j]:
                pattern |= 1 << (i * n + j)
    decoded = dictionary.decode(pattern)
    if decoded is None:
        return None
    tag_id, rot = decoded
    return tag_id, np.roll(quad, -rot, axis=0)


def detect_tags(
    binary: np.ndarray,
    dictionary: TagDictionary,
    lam: float = float("nan"),
    min_edge_px: float = MIN_EDGE_PX,
) -> list[Detection2D]:
    """Find and decode dark-border tags in a binary image.

    Returns an empty list when nothing decodes.  Two detections of the same
    id in one image are reduced to the larger-area quad.
    """
    dark = binary == 0
    labels, n_labels = _label(dark)
    if n_labels == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=n_labels + 1)
    max_px = MAX_COMPONENT_FRACTION * binary.size
    slices = scipy.ndimage.find_objects(labels, max_label=n_labels)
    found: dict[int, Detection2D] = {}
    for lab in range(1, n_labels + 1):
        if sizes[lab] < MIN_COMPONENT_PX or sizes[lab] > max_px:
            continue
        sl = slices[lab - 1]
        if sl is None:
            continue
        box_h = sl[0].stop - sl[0].start
        box_w = sl[1].stop - sl[1].start
        if box_h < min_edge_px or box_w < min_edge_px:
            continue
        local = labels[sl] == lab
        interior = np.zeros_like(local)
        interior[1:-1, 1:-1] = (
            local[:-2, 1:-1] & local[2:, 1:-1] & local[1:-1, :-2] & local[1:-1, 2:]
        )
        ys, xs = np.nonzero(local & ~interior)
        if ys.size < 8:
            continue
        pts = np.stack([xs + sl[1].start, ys + sl[0].start], axis=1).astype(float)
        hull = _convex_hull(pts)
        quad = _simplify_to_quad(hull)
        if quad is None:
            continue
        quad = _ensure_cw(quad)
        corners = _refine_corners(quad, pts)
        if not np.all(np.isfinite(corners)) or not _is_convex_cw(corners):
            continue
        edges = np.linalg.norm(np.diff(corners, axis=0, append=corners[:1]), axis=1)
        if np.any(edges < min_edge_px):
            continue
        decoded = _decode_quad(binary, corners, dictionary)
        if decoded is None:
            continue
        tag_id, ordered = decoded
        det = Detection2D(tag_id=tag_id, corners=ordered, decision_threshold=lam)
        prev = found.get(tag_id)
        if prev is None or det.area > prev.area:
            found[tag_id] = det
    return sorted(found.values(), key=lambda d: d.tag_id)


def adaptive_threshold_search(
    img: IntensityImage,
    dictionary: TagDictionary | None = None,
    scope: int = 256,
    step: float = 1.0,
    append_mode: str = "verbatim",
    detector=None,
) -> tuple[MemoryQueue, float]:
    """Sweep thresholds lam = step * i for i in [0, scope) over the raw image.

    At each step the raw image is re-binarized and detected.  When the step's
    detection count is at least the accumulated queue length, unseen marker
    ids are appended and the optimal threshold is updated (verbatim sweep
    semantics).  ``append_mode="always_union"`` appends unseen ids at every
    step instead, keeping the same optimal-threshold rule.
    """
    if scope < 1 or step <= 0:
        raise ValueError("scope must be >= 1 and step > 0")
    if append_mode not in ("verbatim", "always_union"):
        raise ValueError(f"unknown append_mode {append_mode!r}")
    if detector is None:
        if dictionary is None:
            raise ValueError("a dictionary is required with the built-in detector")

        def detector(binary, lam):
            return detect_tags(binary, dictionary, lam=lam)

    queue = MemoryQueue(entries=[])
    seen: set[int] = set()
    lam_star = 0.0
    for i in range(scope):
        lam = step * i
        dets = detector(binarize(img, lam), lam)
        qualifies = len(dets) >= len(queue)
        if qualifies and dets:  # empty steps keep the initialization value
            lam_star = lam
        if qualifies or append_mode == "always_union":
            for det in dets:
                if det.tag_id not in seen:
                    seen.add(det.tag_id)
                    queue.entries.append(det)
    queue.optimal_threshold = lam_star
    return queue, lam_star


def _pixels_in_quad(quad: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel coordinates inside a CW convex quad."""
    u_min = max(int(np.floor(quad[:, 0].min())), 0)
    u_max = min(int(np.ceil(quad[:, 0].max())), width - 1)
    v_min = max(int(np.floor(quad[:, 1].min())), 0)
    v_max = min(int(np.ceil(quad[:, 1].max())), height - 1)
    if u_max < u_min or v_max < v_min:
        return np.array([], dtype=int), np.array([], dtype=int)
    uu, vv = np.meshgrid(np.arange(u_min, u_max + 1), np.arange(v_min, v_max + 1))
    inside = np.ones(uu.shape, dtype=bool)
    for k in range(4):
        a = quad[k]
        edge = quad[(k + 1) % 4] - a
        cross = edge[0] * (vv - a[1]) - edge[1] * (uu - a[0])
        inside &= cross <= 1e-9
    return uu[inside], vv[inside]


def lift_detections(
    dets: list[Detection2D], img: IntensityImage, cloud: PointCloud
) -> list[tuple[Detection2D, np.ndarray]]:
    """Lift each detection's corners to 3D by the plane-intersection rule.

    A least-squares plane is fitted to the cloud points of all valid pixels
    inside the quad; each corner ray is intersected with that plane.
    Detections without enough range support are dropped with a warning.
    """
    out = []
    for det in dets:
        us, vs = _pixels_in_quad(det.corners, img.width, img.height)
        if us.size:
            src = img.source_index[vs, us]
            src = src[src >= 0]
        else:
            src = np.array([], dtype=int)
        try:
            if src.size < 6:
                raise NoRangeSupport(
                    f"tag {det.tag_id}: only {src.size} supported pixels inside the quad"
                )
            centroid, normal = fit_plane(cloud.xyz[src])
            corners3d = np.vstack(
                [
                    intersect_ray_plane(ray_direction(img.params, u, v), centroid, normal)
                    for u, v in det.corners
                ]
            )
        except NoRangeSupport as exc:
            log.warning("scan %d: dropping tag %d: %s", cloud.scan_id, det.tag_id, exc)
            continue
        out.append((det, corners3d))
    return out


def check_square_corners(corners3d: np.ndarray, side: float, tol_fraction: float = 0.05) -> None:
    """Pairwise-distance check that the corners form a planar square of the size.

    Raises CornerGeometryError when any of the six pairwise distances deviates
    from the canonical square by more than ``tol_fraction * side``.
    """
    expected = {
        (0, 1): side,
        (1, 2): side,
        (2, 3): side,
        (0, 3): side,
        (0, 2): side * np.sqrt(2.0),
        (1, 3): side * np.sqrt(2.0),
    }
    for (i, j), target in expected.items():
        d = float(np.linalg.norm(corners3d[i] - corners3d[j]))
        if abs(d - target) > tol_fraction * side:
            raise CornerGeometryError(
                f"corner pair ({i},{j}) distance {d:.4f} vs expected {target:.4f}"
            )


def observation_from_corners(
    scan_id: int, marker_id: int, corners3d: np.ndarray, side: float
) -> MarkerObservation:
    """Build a MarkerObservation, fitting the pose and validating the shape."""
    from .pose_svd import canonical_corners, solve_marker_pose

    corners3d = np.asarray(corners3d, dtype=float).reshape(4, 3)
    check_square_corners(corners3d, side)
    pose, e_pp = solve_marker_pose(canonical_corners(side), corners3d)
    return MarkerObservation(
        marker_id=marker_id, scan_id=scan_id, corners3d=corners3d, pose=pose, e_pp=e_pp
    )


def save_detections_json(observations: list[MarkerObservation], path) -> None:
    """Export observations as the interchange JSON array."""
    payload = [
        {
            "scan_id": obs.scan_id,
            "marker_id": obs.marker_id,
            "corners3d": obs.corners3d.tolist(),
            "e_pp": obs.e_pp,
        }
        for obs in observations
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_detections_json(path, side: float) -> list[MarkerObservation]:
    """Import external detections; pose and e_pp are recomputed from corners."""
    raw = json.loads(Path(path).read_text())
    return [
        observation_from_corners(
            int(item["scan_id"]), int(item["marker_id"]), np.array(item["corners3d"]), side
        )
        for item in raw
    ]


__all__ = [
    "Detection2D",
    "MarkerObservation",
    "MemoryQueue",
    "adaptive_threshold_search",
    "binarize",
    "check_square_corners",
    "detect_tags",
    "lift_detections",
    "lift_pixel",
    "load_detections_json",
    "observation_from_corners",
    "save_detections_json",
]
