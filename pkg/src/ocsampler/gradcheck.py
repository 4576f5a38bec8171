"""Central finite differences and the relative-error measure used by the gradient checks."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5
# Components smaller than this are compared on an absolute scale: at h=1e-5
# central-difference roundoff alone is ~1e-11.
REL_FLOOR = 1e-5


def central_difference(f, x, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))
