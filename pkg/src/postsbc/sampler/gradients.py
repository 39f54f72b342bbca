"""Central finite-difference gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

REL_STEP = 1e-6


def fd_steps(x: np.ndarray) -> np.ndarray:
    return REL_STEP * np.maximum(1.0, np.abs(x))


def finite_diff_grad(logdensity: Callable[[np.ndarray], float], x) -> np.ndarray:
    """Central-difference gradient with per-coordinate step 1e-6 * max(1, |x_k|).

    Raises ``FloatingPointError`` naming the coordinate when the density is
    non-finite at the centre or at any probe point.
    """
    x = np.array(x, dtype=float)
    f0 = float(logdensity(x))
    if not np.isfinite(f0):
        raise FloatingPointError("log density is not finite at the evaluation point")
    steps = fd_steps(x)
    grad = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += steps[k]
        xm[k] -= steps[k]
        fp = float(logdensity(xp))
        fm = float(logdensity(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"log density not finite at probe for coordinate {k}")
        grad[k] = (fp - fm) / (xp[k] - xm[k])
    return grad
