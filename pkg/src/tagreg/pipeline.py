"""Pipeline orchestration: configuration, stage timing, metrics, and reports.

``run_pipeline`` drives project -> adaptive detect -> lift -> pose fit ->
first-level graph -> factor graph -> merged output.  Ablation modes:
``no_first`` replaces the propagated initial values and the anchor-relative
measurements with identities; ``no_second`` stops after path propagation.
"""

from __future__ import annotations

import configparser
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fgo, initgraph
from .cloud_io import PointCloud, read_cloud, write_merged
from .errors import (
    CornerGeometryError,
    DegenerateCorners,
    FormatError,
    NoObservations,
    ScanSetMismatch,
)
from .geometry import Pose, apply, compose, format_pose, inverse, parse_pose, pose_ominus
from .projection import ProjectionParams, normalize_intensity, project
from .synth import ScanPattern
from .tagdetect import (
    MarkerObservation,
    adaptive_threshold_search,
    lift_detections,
    load_detections_json,
    observation_from_corners,
    save_detections_json,
)
from .tagdict import TagDictionary, resolve_dictionary

log = logging.getLogger(__name__)

MODES = ("full", "no_first", "no_second")

_EXTENSIONS = {"pcd_ascii": ".pcd", "xyzI_csv": ".csv"}


def default_projection(alpha_a: float = 0.002, alpha_i: float = 0.002) -> ProjectionParams:
    """Full-panorama projection window (safe but large; prefer a scene fit)."""
    width = int(round(2.0 * np.pi / alpha_a))
    height = int(round(np.pi / alpha_i)) + 1
    return ProjectionParams(
        alpha_a=alpha_a,
        alpha_i=alpha_i,
        u_offset=width // 2,
        v_offset=height // 2,
        width=width,
        height=height,
    )


def projection_for_pattern(pattern: ScanPattern, margin: int = 6) -> ProjectionParams:
    """Projection window that tightly covers a synthetic scan pattern."""
    i_lo = min(int(np.ceil(pattern.theta_min / pattern.alpha_a - 1e-9)), 0)
    i_hi = max(int(np.floor(pattern.theta_max / pattern.alpha_a + 1e-9)), 0)
    j_lo = min(int(np.ceil(pattern.phi_min / pattern.alpha_i - 1e-9)), 0)
    j_hi = max(int(np.floor(pattern.phi_max / pattern.alpha_i + 1e-9)), 0)
    return ProjectionParams(
        alpha_a=pattern.alpha_a,
        alpha_i=pattern.alpha_i,
        u_offset=margin - i_lo,
        v_offset=margin - j_lo,
        width=i_hi - i_lo + 1 + 2 * margin,
        height=j_hi - j_lo + 1 + 2 * margin,
    )


@dataclass
class RunConfig:
    input_dir: str = ""
    fmt: str = "pcd_ascii"
    marker_side: float = 0.0
    dictionary: str = "default16"
    projection: ProjectionParams | None = None
    scope: int = 256
    step: float = 1.0
    append_mode: str = "verbatim"
    noise: fgo.NoiseConfig = field(default_factory=fgo.NoiseConfig)
    mode: str = "full"
    seed: int = 0
    out_dir: str | None = None
    detections_json: str | None = None
    lm: fgo.LMOptions = field(default_factory=fgo.LMOptions)
    weight_rel_by_path: bool = False
    workers: int = 1

    def __post_init__(self):
        aliases = {"pcd": "pcd_ascii", "csv": "xyzI_csv"}
        self.fmt = aliases.get(self.fmt, self.fmt)
        if self.fmt not in _EXTENSIONS:
            raise ValueError(f"format must be one of {sorted(_EXTENSIONS)}, got {self.fmt!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.marker_side <= 0:
            raise ValueError("marker_side must be positive")


@dataclass
class RegistrationReport:
    mode: str
    scan_poses: dict[int, Pose]
    marker_poses: dict[int, Pose]
    corners: dict[tuple[int, int], np.ndarray]
    observations: list[MarkerObservation]
    dropped_scans: list[int]
    timings: dict[str, float]
    final_cost: float | None = None
    thresholds: dict[int, float] = field(default_factory=dict)
    lm_log: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.dropped_scans)


class _Timer:
    def __init__(self):
        self.buckets: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def add(self, stage: str, seconds: float) -> None:
        self.buckets[stage] = self.buckets.get(stage, 0.0) + seconds

    def finish(self) -> dict[str, float]:
        total = time.perf_counter() - self._t0
        accounted = sum(self.buckets.values())
        self.buckets["other"] = max(total - accounted, 0.0)
        self.buckets["total"] = sum(v for k, v in self.buckets.items() if k != "total")
        return self.buckets


def _detect_scan(
    cloud: PointCloud,
    params: ProjectionParams,
    dictionary: TagDictionary,
    cfg: RunConfig,
    timer: _Timer,
) -> tuple[list[MarkerObservation], float]:
    t0 = time.perf_counter()
    img = normalize_intensity(project(cloud, params))
    t1 = time.perf_counter()
    queue, lam_star = adaptive_threshold_search(
        img, dictionary, scope=cfg.scope, step=cfg.step, append_mode=cfg.append_mode
    )
    t2 = time.perf_counter()
    lifted = lift_detections(queue.entries, img, cloud)
    t3 = time.perf_counter()
    observations = []
    for det, corners3d in lifted:
        try:
            observations.append(
                observation_from_corners(cloud.scan_id, det.tag_id, corners3d, cfg.marker_side)
            )
        except (CornerGeometryError, DegenerateCorners) as exc:
            log.warning("scan %d: dropping tag %d: %s", cloud.scan_id, det.tag_id, exc)
    t4 = time.perf_counter()
    timer.add("project", t1 - t0)
    timer.add("detect", t2 - t1)
    timer.add("lift", t3 - t2)
    timer.add("svd", t4 - t3)
    return observations, lam_star


def detect_observations(
    clouds: list[PointCloud], cfg: RunConfig, timer: _Timer | None = None
) -> tuple[list[MarkerObservation], dict[int, float]]:
    """Per-scan detection fan-out; returns observations and lambda* per scan."""
    timer = timer or _Timer()
    dictionary = resolve_dictionary(cfg.dictionary)
    params = cfg.projection or default_projection()
    observations: list[MarkerObservation] = []
    thresholds: dict[int, float] = {}
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(
                pool.map(lambda c: _detect_scan(c, params, dictionary, cfg, timer), clouds)
            )
    else:
        results = [_detect_scan(c, params, dictionary, cfg, timer) for c in clouds]
    for cloud, (obs, lam_star) in zip(clouds, results):
        observations.extend(obs)
        thresholds[cloud.scan_id] = lam_star
    return observations, thresholds


def _identity_init(
    observations: list[MarkerObservation], side: float, anchor: int
) -> initgraph.InitialValues:
    """First-graph-ablation initial values: all scan poses identity."""
    from .pose_svd import canonical_corners

    scan_ids = sorted({obs.scan_id for obs in observations})
    scan_poses = {i: Pose.identity() for i in scan_ids}
    best: dict[int, MarkerObservation] = {}
    for obs in observations:
        if obs.marker_id not in best or obs.e_pp < best[obs.marker_id].e_pp:
            best[obs.marker_id] = obs
    marker_poses = {j: best[j].pose for j in sorted(best)}
    corners = {}
    base = canonical_corners(side)
    for j, pose in marker_poses.items():
        world = apply(pose, base)
        for s in range(4):
            corners[(j, s + 1)] = world[s]
    return initgraph.InitialValues(
        scan_poses=scan_poses, marker_poses=marker_poses, corners=corners, path_weights={}
    )


def register_observations(
    observations: list[MarkerObservation],
    cfg: RunConfig,
    anchor: int | None = None,
    timer: _Timer | None = None,
) -> RegistrationReport:
    """Graph stages only (first-level graph, factor graph) on given observations."""
    timer = timer or _Timer()
    if not observations:
        raise NoObservations("no marker was detected in any scan")
    t0 = time.perf_counter()
    if anchor is None:
        anchor = min(obs.scan_id for obs in observations)
    dropped: list[int] = []
    if cfg.mode == "no_first":
        init = _identity_init(observations, cfg.marker_side, anchor)
        kept = observations
    else:
        graph = initgraph.build(observations, anchor=anchor)
        paths = initgraph.shortest_paths(graph)
        dropped = paths.unreachable
        init = initgraph.propagate_poses(graph, paths, cfg.marker_side)
        kept = [obs for obs in observations if obs.scan_id in init.scan_poses]
    timer.add("graph", time.perf_counter() - t0)

    if cfg.mode == "no_second":
        report = RegistrationReport(
            mode=cfg.mode,
            scan_poses=init.scan_poses,
            marker_poses=init.marker_poses,
            corners=init.corners,
            observations=kept,
            dropped_scans=dropped,
            timings={},
        )
        return report

    t0 = time.perf_counter()
    variables, factors = fgo.build_graph(
        kept,
        init,
        cfg.noise,
        cfg.marker_side,
        anchor=anchor,
        weight_rel_by_path=cfg.weight_rel_by_path,
    )
    if cfg.mode == "no_first":
        # relative-pose factors fall back to identity measurements
        factors = [
            replace(f, z=Pose.identity()) if f.kind == "anchor_relative" else f
            for f in factors
        ]
    result = fgo.solve_lm(variables, factors, cfg.lm)
    timer.add("fgo", time.perf_counter() - t0)
    return RegistrationReport(
        mode=cfg.mode,
        scan_poses=result.variables.scan_poses,
        marker_poses=result.variables.marker_poses,
        corners=result.variables.corners,
        observations=kept,
        dropped_scans=dropped,
        timings={},
        final_cost=result.cost,
        lm_log=result.log,
    )


def run_pipeline(cfg: RunConfig, clouds: list[PointCloud] | None = None) -> RegistrationReport:
    """Full pipeline from scan files (or in-memory clouds) to outputs."""
    timer = _Timer()
    if clouds is None:
        t0 = time.perf_counter()
        ext = _EXTENSIONS[cfg.fmt]
        files = sorted(Path(cfg.input_dir).glob(f"*{ext}"))
        if not files:
            raise FormatError(f"no {ext} files in {cfg.input_dir}")
        clouds = []
        for scan_id, path in enumerate(files):
            cloud, rep = read_cloud(path, cfg.fmt, scan_id=scan_id)
            if rep.dropped:
                log.warning("%s: dropped %d non-finite rows", path, rep.dropped)
            clouds.append(cloud)
        timer.add("io", time.perf_counter() - t0)

    if cfg.detections_json:
        observations = load_detections_json(cfg.detections_json, cfg.marker_side)
        scan_ids = {c.scan_id for c in clouds}
        observations = [obs for obs in observations if obs.scan_id in scan_ids]
        thresholds: dict[int, float] = {}
    else:
        observations, thresholds = detect_observations(clouds, cfg, timer)

    anchor = clouds[0].scan_id
    report = register_observations(observations, cfg, anchor=anchor, timer=timer)
    report.thresholds = thresholds
    observed_ids = {obs.scan_id for obs in report.observations}
    silent = [c.scan_id for c in clouds if c.scan_id not in observed_ids]
    report.dropped_scans = sorted(set(report.dropped_scans) | set(silent))

    if cfg.out_dir:
        t0 = time.perf_counter()
        write_outputs(report, clouds, cfg)
        timer.add("output", time.perf_counter() - t0)
    report.timings = timer.finish()
    return report


def write_outputs(report: RegistrationReport, clouds: list[PointCloud], cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_poses(report.scan_poses, out / "poses.txt")
    save_detections_json(report.observations, out / "detections.json")
    registered = [c for c in clouds if c.scan_id in report.scan_poses]
    poses = [report.scan_poses[c.scan_id] for c in registered]
    ext = _EXTENSIONS[cfg.fmt]
    write_merged(registered, poses, out / f"merged{ext}", cfg.fmt)
    if report.lm_log:
        (out / "fgo_iterations.txt").write_text("\n".join(report.lm_log) + "\n")
    (out / "report.txt").write_text(format_report(report))


def format_report(report: RegistrationReport) -> str:
    lines = [f"mode: {report.mode}"]
    lines.append(f"registered_scans: {sorted(report.scan_poses)}")
    lines.append(f"dropped_scans: {report.dropped_scans}")
    if report.final_cost is not None:
        lines.append(f"final_cost: {report.final_cost:.12e}")
    for scan_id in sorted(report.thresholds):
        lines.append(f"lambda_star scan {scan_id}: {report.thresholds[scan_id]:g}")
    n_obs = len(report.observations)
    lines.append(f"observations: {n_obs}")
    for obs in report.observations:
        lines.append(f"  scan {obs.scan_id} marker {obs.marker_id} e_pp {obs.e_pp:.3e}")
    lines.append("timings_s:")
    for stage, seconds in report.timings.items():
        lines.append(f"  {stage}: {seconds:.4f}")
    return "\n".join(lines) + "\n"


def write_poses(poses: dict[int, Pose], path) -> None:
    """One line per scan: the scan id followed by the 12-number pose."""
    lines = [f"{scan_id} {format_pose(pose)}" for scan_id, pose in sorted(poses.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> dict[int, Pose]:
    poses = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split(maxsplit=1)
        if len(tokens) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'scan_id pose'")
        try:
            scan_id = int(tokens[0])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad scan id") from exc
        poses[scan_id] = parse_pose(tokens[1])
    return poses


def rmse(est: dict[int, Pose], gt: dict[int, Pose], anchor: int | None = None) -> tuple[float, float]:
    """Anchor-relative RMSE over non-anchor scans: (RMSE_T meters, RMSE_R radians).

    Both pose sets are re-expressed relative to the anchor scan, so a common
    rigid transform applied to either set cancels out.
    """
    if set(est) != set(gt):
        raise ScanSetMismatch(f"scan ids differ: {sorted(est)} vs {sorted(gt)}")
    if len(est) < 2:
        return 0.0, 0.0
    if anchor is None:
        anchor = min(est)
    inv_est = inverse(est[anchor])
    inv_gt = inverse(gt[anchor])
    sq_t = []
    sq_r = []
    for scan_id in sorted(est):
        if scan_id == anchor:
            continue
        delta = pose_ominus(compose(inv_est, est[scan_id]), compose(inv_gt, gt[scan_id]))
        sq_r.append(float(np.dot(delta.rot, delta.rot)))
        sq_t.append(float(np.dot(delta.trans, delta.trans)))
    return float(np.sqrt(np.mean(sq_t))), float(np.sqrt(np.mean(sq_r)))


def _maybe(parser: configparser.ConfigParser, section: str) -> dict:
    return dict(parser[section]) if parser.has_section(section) else {}


def load_config(path) -> RunConfig:
    """RunConfig from an INI file (sections run/projection/search/noise/solver)."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FormatError(f"cannot read config file {path}")
    run = _maybe(parser, "run")
    proj = _maybe(parser, "projection")
    search = _maybe(parser, "search")
    noise_kv = _maybe(parser, "noise")
    solver = _maybe(parser, "solver")
    try:
        projection = None
        if proj:
            projection = ProjectionParams(
                alpha_a=float(proj["alpha_a"]),
                alpha_i=float(proj["alpha_i"]),
                u_offset=int(proj["u_offset"]),
                v_offset=int(proj["v_offset"]),
                width=int(proj["width"]),
                height=int(proj["height"]),
            )
        noise = fgo.NoiseConfig(**{k: float(v) for k, v in noise_kv.items()})
        lm_kwargs = {}
        for key, value in solver.items():
            lm_kwargs[key] = int(value) if key == "max_iters" else float(value)
        mode = run.get("mode", "full").replace("-", "_")
        return RunConfig(
            input_dir=run.get("input", ""),
            fmt=run.get("format", "pcd_ascii"),
            marker_side=float(run.get("marker_size", 0.0)),
            dictionary=run.get("dictionary", "default16"),
            projection=projection,
            scope=int(search.get("scope", 256)),
            step=float(search.get("step", 1.0)),
            append_mode=search.get("append_mode", "verbatim"),
            noise=noise,
            mode="no_first" if mode == "no_first_graph" else
            "no_second" if mode == "no_second_graph" else mode,
            seed=int(run.get("seed", 0)),
            out_dir=run.get("out") or None,
            detections_json=run.get("detections") or None,
            lm=fgo.LMOptions(**lm_kwargs),
            weight_rel_by_path=run.get("weight_rel_by_path", "0") in ("1", "true", "yes"),
            workers=int(run.get("workers", 1)),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"config file {path}: {exc}") from exc
