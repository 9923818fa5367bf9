"""Central finite differences, independent of the autodiff engine."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


def numerical_gradient(
    f: Callable[[], float],
    arrays: Sequence[np.ndarray],
    eps: float = 1e-5,
    indices: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> list[np.ndarray]:
    """d f / d array for each array, perturbing entries in place.

    ``f`` must read the arrays afresh on each call. ``indices[k]``, if given,
    restricts array ``k`` to those flat positions (others left as NaN).
    """
    grads = []
    for k, arr in enumerate(arrays):
        g = np.full(arr.shape, np.nan)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        pick = range(flat.size) if indices is None or indices[k] is None else indices[k]
        for i in pick:
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| over checked entries, relative to the largest numeric magnitude."""
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a, n = np.asarray(analytic, dtype=np.float64)[mask], numeric[mask]
    scale = max(np.abs(n).max(), np.abs(a).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def sample_indices(size: int, limit: Optional[int], rng: np.random.Generator) -> Optional[np.ndarray]:
    if limit is None or size <= limit:
        return None
    return np.sort(rng.choice(size, limit, replace=False))
