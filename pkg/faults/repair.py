"""Approximate local repair - windowed neighbor averaging and vector scrubbing"""

from __future__ import annotations

import numpy as np

import config
from tools.sparse_kernels import DenseVector


def repair_neighbor_average(values: DenseVector, index: int, window: int) -> float:
    """Mean of the finite entries within ``window`` of ``index`` (itself excluded).

    Args:
        values: The vector being repaired.
        index: Position of the invalid entry.
        window: Neighbors considered on each side (at least 1).

    Returns:
        The mean of the valid neighbors, or 0.0 when none is finite.
    """
    if window < 1:
        raise ValueError("repair window must be at least 1")
    lo = max(0, index - window)
    hi = min(values.shape[0], index + window + 1)
    neighbors = np.concatenate((values[lo:index], values[index + 1:hi]))
    valid = neighbors[np.isfinite(neighbors)]
    # divide first: neighbors near the float64 limit must not overflow the sum
    return float(np.sum(valid / valid.size)) if valid.size else 0.0


def scrub_vector(
    v: DenseVector, window: int = config.DEFAULT_SCRUB_WINDOW, *, inplace: bool = False
) -> DenseVector:
    """Replace every NaN/Inf entry by the average of its valid neighbors.

    Repairs are computed from the unscrubbed input, so the result does not
    depend on scan order. A vector without invalid entries is returned as is.
    """
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size == 0:
        return v
    repaired = [repair_neighbor_average(v, int(i), window) for i in bad]
    out = v if inplace else v.copy()
    out[bad] = repaired
    return out
