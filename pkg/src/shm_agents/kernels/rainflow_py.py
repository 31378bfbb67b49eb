"""Pure-Python four-point rainflow counting.

Reference backend for the compiled kernel: both must produce identical
cycle multisets. The four-point rule scans a stack of turning points and
extracts the inner pair (s2, s3) whenever its range is no larger than the
ranges on either side; leftovers are counted as half cycles.
"""

from __future__ import annotations

import numpy as np


def count_cycles(turning: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cycle decomposition of a turning-point sequence.

    Returns (ranges, means, counts) with counts in {0.5, 1.0}; full cycles
    first, then residue half cycles in order.
    """
    tp = np.asarray(turning, dtype=float)
    ranges: list[float] = []
    means: list[float] = []
    counts: list[float] = []
    stack: list[float] = []
    for value in tp:
        stack.append(float(value))
        while len(stack) >= 4:
            s1, s2, s3, s4 = stack[-4], stack[-3], stack[-2], stack[-1]
            r_inner = abs(s3 - s2)
            if r_inner <= abs(s2 - s1) and r_inner <= abs(s4 - s3):
                ranges.append(r_inner)
                means.append(0.5 * (s2 + s3))
                counts.append(1.0)
                del stack[-3:-1]
            else:
                break
    for a, b in zip(stack, stack[1:]):
        ranges.append(abs(b - a))
        means.append(0.5 * (a + b))
        counts.append(0.5)
    return (np.asarray(ranges, dtype=float),
            np.asarray(means, dtype=float),
            np.asarray(counts, dtype=float))
