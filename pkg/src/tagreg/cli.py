"""Command-line interface: register scans, render synthetic scenes, evaluate poses.

Exit codes for ``register``: 0 success, 2 partial (scans dropped), 3 no
markers detected, 4 I/O or format error, 5 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline
from .cloud_io import write_cloud
from .errors import (
    AngleNearPi,
    EmptyCloud,
    FormatError,
    IoError,
    NoObservations,
    NonFiniteCost,
    ScanSetMismatch,
    SingularNormalEquations,
    TagRegError,
)
from .synth import exact_observations, load_scene, render_scans
from .tagdetect import save_detections_json

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_NO_MARKERS = 3
EXIT_IO = 4
EXIT_SOLVER = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagreg")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register a directory of scans")
    reg.add_argument("--input", help="directory of scan files")
    reg.add_argument("--format", choices=["pcd", "csv"], help="scan file format")
    reg.add_argument("--marker-size", type=float, help="marker side length in meters")
    reg.add_argument("--dict", default=None, help="dictionary file or 'default16'")
    reg.add_argument(
        "--mode", choices=["full", "no-first", "no-second"], default=None,
        help="ablation mode",
    )
    reg.add_argument("--config", default=None, help="INI config file")
    reg.add_argument("--out", default=None, help="output directory")
    reg.add_argument("--detections", default=None, help="import detections JSON")
    reg.add_argument("--seed", type=int, default=None)

    syn = sub.add_parser("synth", help="render a synthetic scene to scan files")
    syn.add_argument("--scene", required=True, help="scene description file")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True, help="output directory")

    ev = sub.add_parser("eval", help="RMSE between estimated and ground-truth poses")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    return parser


def _register(args) -> int:
    if args.config:
        cfg = pipeline.load_config(args.config)
    elif args.marker_size:
        cfg = pipeline.RunConfig(marker_side=args.marker_size)
    else:
        print("register: --marker-size (or a config file) is required", file=sys.stderr)
        return EXIT_IO
    updates = {}
    if args.input:
        updates["input_dir"] = args.input
    if args.format:
        updates["fmt"] = args.format
    if args.marker_size:
        updates["marker_side"] = args.marker_size
    if args.dict:
        updates["dictionary"] = args.dict
    if args.mode:
        updates["mode"] = args.mode.replace("-", "_")
    if args.out:
        updates["out_dir"] = args.out
    if args.detections:
        updates["detections_json"] = args.detections
    if args.seed is not None:
        updates["seed"] = args.seed
    cfg = dataclasses.replace(cfg, **updates)
    if not cfg.input_dir:
        print("register: --input (or a config with run.input) is required", file=sys.stderr)
        return EXIT_IO
    report = pipeline.run_pipeline(cfg)
    t_total = report.timings.get("total", 0.0)
    print(
        f"registered {len(report.scan_poses)} scans, "
        f"{len(report.marker_poses)} markers in {t_total:.2f} s"
    )
    if report.final_cost is not None:
        print(f"final cost {report.final_cost:.6e}")
    if report.dropped_scans:
        print(f"dropped scans: {report.dropped_scans}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _synth(args) -> int:
    spec = load_scene(args.scene)
    clouds, gt = render_scans(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cloud in clouds:
        write_cloud(cloud, out / f"scan_{cloud.scan_id:03d}.pcd", "pcd_ascii")
    pipeline.write_poses(gt.scan_poses, out / "gt_poses.txt")
    save_detections_json(exact_observations(spec, gt), out / "gt_detections.json")
    sides = {m.side for m in spec.markers}
    params = pipeline.projection_for_pattern(spec.pattern)
    if len(sides) == 1:
        lines = [
            "[run]",
            f"input = {out}",
            "format = pcd_ascii",
            f"marker_size = {sides.pop():g}",
            "dictionary = default16",
            "mode = full",
            f"out = {out / 'registered'}",
            "",
            "[projection]",
            f"alpha_a = {params.alpha_a:g}",
            f"alpha_i = {params.alpha_i:g}",
            f"u_offset = {params.u_offset}",
            f"v_offset = {params.v_offset}",
            f"width = {params.width}",
            f"height = {params.height}",
        ]
        (out / "register.ini").write_text("\n".join(lines) + "\n")
    print(f"rendered {len(clouds)} scans to {out}")
    return EXIT_OK


def _eval(args) -> int:
    est = pipeline.read_poses(args.est)
    gt = pipeline.read_poses(args.gt)
    rmse_t, rmse_r = pipeline.rmse(est, gt)
    print(f"RMSE_T {rmse_t:.6f} m")
    print(f"RMSE_R {rmse_r:.6f} rad")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.command == "register":
            return _register(args)
        if args.command == "synth":
            return _synth(args)
        return _eval(args)
    except NoObservations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_MARKERS
    except (FormatError, EmptyCloud, IoError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularNormalEquations, NonFiniteCost, AngleNearPi) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScanSetMismatch, TagRegError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
