"""Benchmark the numba kernels against their NumPy/SciPy fallbacks.

Run:  python benchmarks/bench_kernels.py
The same fallbacks are selected package-wide by setting TAGREG_NO_NUMBA=1.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tagreg import accel  # noqa: E402
from tagreg.projection import ProjectionParams, _project_numpy  # noqa: E402


def timeit(fn, n_warmup=2, n_runs=5):
    for _ in range(n_warmup):
        fn()
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)) * 1000.0, float(np.std(times)) * 1000.0


def report(name, numba_fn, numpy_fn):
    mean_nb, std_nb = timeit(numba_fn)
    mean_np, std_np = timeit(numpy_fn)
    speedup = mean_np / mean_nb if mean_nb > 0 else float("inf")
    print(f"{name:24s} numba {mean_nb:8.2f} +- {std_nb:5.2f} ms | "
          f"numpy {mean_np:8.2f} +- {std_np:5.2f} ms | speedup {speedup:5.2f}x")


def bench_projection(rng):
    from tagreg._kernels_nb import project_scatter_nb

    xyz = rng.uniform(-10, 10, (1_000_000, 3))
    intensity = rng.uniform(0, 255, 1_000_000)
    params = ProjectionParams(0.002, 0.002, 1571, 786, 3142, 1572)
    args = (params.alpha_a, params.alpha_i, params.u_offset, params.v_offset,
            params.width, params.height)
    report(
        "project_scatter",
        lambda: project_scatter_nb(xyz, intensity, *args),
        lambda: _project_numpy(xyz, intensity, params),
    )


def bench_labeling(rng):
    import scipy.ndimage

    from tagreg._kernels_nb import label_components_nb

    mask = rng.random((1000, 1500)) > 0.6
    report(
        "label_components",
        lambda: label_components_nb(mask),
        lambda: scipy.ndimage.label(mask, structure=np.ones((3, 3), dtype=int)),
    )


def bench_hull(rng):
    from scipy.spatial import ConvexHull

    from tagreg._kernels_nb import convex_hull_nb

    pts = rng.normal(0, 100, (20000, 2))
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts_sorted = np.ascontiguousarray(pts[order])
    report(
        "convex_hull",
        lambda: convex_hull_nb(pts_sorted),
        lambda: ConvexHull(pts),
    )


def bench_raycast(rng):
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
    from conftest import corridor_scene

    from tagreg._kernels_nb import raycast_nb
    from tagreg.synth import _raycast_numpy, _ray_grid, _scene_arrays

    spec = corridor_scene(n_scans=5)
    arrays = _scene_arrays(spec)
    contig = [np.ascontiguousarray(a) for a in arrays]
    dirs = _ray_grid(spec.pattern)
    pose = spec.sensor_poses[2]
    world_dirs = np.ascontiguousarray(dirs @ pose.r.T)
    origin = np.ascontiguousarray(pose.t)
    report(
        "raycast_planes",
        lambda: raycast_nb(origin, world_dirs, *contig),
        lambda: _raycast_numpy(pose.t, world_dirs, arrays),
    )


def main():
    if not accel.HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"numba JIT enabled package-wide: {accel.JIT_ENABLED}")
    bench_projection(rng)
    bench_labeling(rng)
    bench_hull(rng)
    bench_raycast(rng)


if __name__ == "__main__":
    main()
