"""Numba/NumPy backend selection for the hot kernels.

Every hot kernel in the package exists twice: a numba ``@njit`` version and a
vectorized NumPy/SciPy fallback.  The fallback is selected when numba is not
importable or when the environment variable ``TAGREG_NO_NUMBA`` is set to a
non-empty value other than ``0``.  ``benchmarks/bench_kernels.py`` times both
paths side by side.
"""

from __future__ import annotations

import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_DISABLED = os.environ.get("TAGREG_NO_NUMBA", "").strip() not in ("", "0")

JIT_ENABLED = HAS_NUMBA and not _DISABLED


def backend_name() -> str:
    return "numba" if JIT_ENABLED else "numpy"
