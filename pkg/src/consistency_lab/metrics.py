"""Sample-quality and field-accuracy metrics."""

from __future__ import annotations

import numpy as np

from .rng import SubstreamRng


def sliced_wasserstein(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """Average 1-D Wasserstein-1 distance over random unit projections.

    Both sample sets must have the same size; each projection compares
    sorted projected samples directly.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"sample sets must match in shape, got {a.shape} vs {b.shape}")
    dim = a.shape[1]
    rng = SubstreamRng(seed, 0)
    dirs = rng.normal((n_projections, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = a @ dirs.T   # (n, P)
    pb = b @ dirs.T
    pa.sort(axis=0)
    pb.sort(axis=0)
    return float(np.mean(np.abs(pa - pb)))


def fit_loglog_slope(pairs) -> float:
    """Least-squares slope of log(error) against log(step size)."""
    dts = np.log([p[0] for p in pairs])
    errs = np.log([p[1] for p in pairs])
    return float(np.polyfit(dts, errs, 1)[0])
