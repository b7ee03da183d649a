"""Point-cloud data model and ASCII file I/O (PCD v0.7 subset and xyzI CSV)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, FormatError, IoError
from .geometry import Pose, apply

log = logging.getLogger(__name__)

FORMATS = ("pcd_ascii", "xyzI_csv")

_PCD_FIELDS = ("x", "y", "z", "intensity")


@dataclass(frozen=True)
class PointCloud:
    """Ordered points of one scan: ``xyz`` is (N, 3), ``intensity`` is (N,)."""

    xyz: np.ndarray
    intensity: np.ndarray
    scan_id: int = 0

    def __len__(self) -> int:
        return self.xyz.shape[0]


@dataclass
class ParseReport:
    total_rows: int = 0
    dropped_nonfinite: int = 0
    clamped_negative_intensity: int = 0
    path: str = ""

    @property
    def dropped(self) -> int:
        return self.dropped_nonfinite


@dataclass
class _Rows:
    xyz: list = field(default_factory=list)
    intensity: list = field(default_factory=list)


def _finish(rows: np.ndarray, report: ParseReport, scan_id: int, path) -> PointCloud:
    report.total_rows = rows.shape[0]
    finite = np.all(np.isfinite(rows), axis=1)
    report.dropped_nonfinite = int(np.sum(~finite))
    rows = rows[finite]
    if rows.shape[0] == 0:
        raise EmptyCloud(f"no valid points in {path}")
    intensity = rows[:, 3]
    negative = intensity < 0.0
    if np.any(negative):
        report.clamped_negative_intensity = int(np.sum(negative))
        log.warning(
            "%s: clamped %d negative intensities to 0", path, report.clamped_negative_intensity
        )
        intensity = np.where(negative, 0.0, intensity)
    return PointCloud(xyz=rows[:, :3].copy(), intensity=intensity.copy(), scan_id=scan_id)


def _parse_rows(lines, path, start_line: int) -> np.ndarray:
    rows = []
    for k, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 4:
            raise FormatError(f"{path}:{start_line + k}: expected 4 columns, got {len(tokens)}")
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError as exc:
            raise FormatError(f"{path}:{start_line + k}: {exc}") from exc
    return np.array(rows, dtype=float).reshape(-1, 4)


def _read_pcd(path, scan_id: int) -> tuple[PointCloud, ParseReport]:
    lines = Path(path).read_text().splitlines()
    header: dict[str, list[str]] = {}
    data_start = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        key = tokens[0].upper()
        header[key] = tokens[1:]
        if key == "DATA":
            data_start = i + 1
            break
    if data_start is None:
        raise FormatError(f"{path}: missing DATA line in PCD header")
    if header.get("DATA", [""])[0].lower() != "ascii":
        raise FormatError(f"{path}: only DATA ascii is supported")
    fields = [f.lower() for f in header.get("FIELDS", [])]
    if sorted(fields) != sorted(_PCD_FIELDS):
        raise FormatError(f"{path}: FIELDS must be x y z intensity, got {fields}")
    order = [fields.index(name) for name in _PCD_FIELDS]
    raw = _parse_rows(lines[data_start:], path, data_start + 1)
    raw = raw[:, order]
    if "POINTS" in header:
        try:
            declared = int(header["POINTS"][0])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: bad POINTS value") from exc
        if declared != raw.shape[0]:
            raise FormatError(f"{path}: POINTS says {declared}, file has {raw.shape[0]} rows")
    report = ParseReport(path=str(path))
    return _finish(raw, report, scan_id, path), report


def _read_csv(path, scan_id: int) -> tuple[PointCloud, ParseReport]:
    lines = Path(path).read_text().splitlines()
    raw = _parse_rows(lines, path, 1)
    report = ParseReport(path=str(path))
    return _finish(raw, report, scan_id, path), report


def read_cloud(path, fmt: str, scan_id: int = 0) -> tuple[PointCloud, ParseReport]:
    """Read a scan file.

    Non-finite rows are dropped and counted in the returned report; negative
    intensities are clamped to zero with a warning.
    """
    if fmt == "pcd_ascii":
        return _read_pcd(path, scan_id)
    if fmt == "xyzI_csv":
        return _read_csv(path, scan_id)
    raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")


def _format_rows(xyz: np.ndarray, intensity: np.ndarray) -> str:
    out = []
    for (x, y, z), i in zip(xyz, intensity):
        out.append(f"{x:.6f} {y:.6f} {z:.6f} {i:.6f}")
    return "\n".join(out)


def write_cloud(cloud: PointCloud, path, fmt: str) -> None:
    """Write one cloud in the given format."""
    n = len(cloud)
    body = _format_rows(cloud.xyz, cloud.intensity)
    try:
        if fmt == "pcd_ascii":
            header = "\n".join(
                [
                    "# .PCD v0.7 - Point Cloud Data file format",
                    "VERSION 0.7",
                    "FIELDS x y z intensity",
                    "SIZE 4 4 4 4",
                    "TYPE F F F F",
                    "COUNT 1 1 1 1",
                    f"WIDTH {n}",
                    "HEIGHT 1",
                    "VIEWPOINT 0 0 0 1 0 0 0",
                    f"POINTS {n}",
                    "DATA ascii",
                ]
            )
            Path(path).write_text(header + "\n" + body + "\n")
        elif fmt == "xyzI_csv":
            Path(path).write_text(body + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_merged(clouds: list[PointCloud], poses: list[Pose], path, fmt: str) -> None:
    """Transform every cloud by its global pose and write one merged file."""
    if len(clouds) != len(poses):
        raise ValueError("clouds and poses must be index-aligned")
    xyz = np.vstack([apply(pose, cloud.xyz) for cloud, pose in zip(clouds, poses)])
    intensity = np.concatenate([cloud.intensity for cloud in clouds])
    write_cloud(PointCloud(xyz=xyz, intensity=intensity, scan_id=-1), path, fmt)
