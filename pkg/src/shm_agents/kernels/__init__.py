"""Cycle-counting kernels with compiled/pure-Python backend selection.

The compiled extension is preferred when it imported cleanly; setting
SHM_AGENTS_PURE_PY=1 forces the pure-Python backend (used by the benchmark
to compare both). `BACKEND` records which one is active.
"""

from __future__ import annotations

import os

import numpy as np

from . import rainflow_py

if os.environ.get("SHM_AGENTS_PURE_PY"):
    count_cycles = rainflow_py.count_cycles
    BACKEND = "python"
else:
    try:
        from ._rainflow import count_cycles  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        count_cycles = rainflow_py.count_cycles
        BACKEND = "python"


def turning_points(signal: np.ndarray) -> np.ndarray:
    """Strict local extrema of a signal, endpoints included; plateaus are
    collapsed to a single point."""
    x = np.asarray(signal, dtype=float).ravel()
    if x.size == 0:
        return x
    # drop repeats so plateaus cannot fake extrema
    keep = np.concatenate([[True], np.diff(x) != 0.0])
    x = x[keep]
    if x.size < 3:
        return x
    d = np.diff(x)
    extrema = np.nonzero(d[:-1] * d[1:] < 0)[0] + 1
    idx = np.concatenate([[0], extrema, [x.size - 1]])
    return x[idx]


def rainflow_cycles(signal: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rainflow decomposition of a raw signal: (ranges, means, counts)."""
    tp = turning_points(signal)
    tp = np.ascontiguousarray(tp, dtype=np.float64)
    return count_cycles(tp)


__all__ = ["BACKEND", "count_cycles", "turning_points", "rainflow_cycles", "rainflow_py"]
