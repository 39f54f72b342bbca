"""Fixed-step classical Runge-Kutta integration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

GRID_TOL = 1e-9


class IntegrationError(RuntimeError):
    """State became non-finite (or non-positive when positivity is required)."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:g}")
        self.time = time


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def to_csv(self, labels: Sequence[str] = ("H", "L")) -> str:
        lines = ["time," + ",".join(labels)]
        for t, s in zip(self.times, self.states):
            lines.append(f"{t!r}," + ",".join(repr(float(v)) for v in s))
        return "\n".join(lines) + "\n"


def grid_steps(t_grid: Sequence[float], h: float, t0: float | None = None) -> np.ndarray:
    """Integer step counts for each grid time; they must be multiples of ``h``."""
    t = np.asarray(t_grid, dtype=float)
    if h <= 0:
        raise ValueError("step size must be positive")
    if t.ndim != 1 or t.size == 0:
        raise ValueError("time grid must be a non-empty 1-D sequence")
    if np.any(np.diff(t) < 0):
        raise ValueError("time grid must be non-decreasing")
    start = t[0] if t0 is None else t0
    k = (t - start) / h
    steps = np.rint(k)
    if np.any(np.abs(k - steps) * h > GRID_TOL) or np.any(steps < 0):
        raise ValueError(f"grid points must be non-negative integer multiples of h={h} from t0")
    return steps.astype(np.int64)


def rk4_solve(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0,
    t_grid: Sequence[float],
    h: float,
    positive: bool = False,
) -> Trajectory:
    """Integrate an autonomous ODE with classical RK4 and sample it on ``t_grid``.

    Integration starts at ``t_grid[0]`` from ``y0``.  With ``positive=True``
    any non-positive component is an integration failure.
    """
    steps = grid_steps(t_grid, h)
    y = np.array(y0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((len(steps), y.size))
    done = 0
    for idx, target in enumerate(steps):
        while done < target:
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            done += 1
            if not np.all(np.isfinite(y)) or (positive and np.any(y <= 0)):
                raise IntegrationError("integration failed", t_grid[0] + done * h)
        out[idx] = y
    return Trajectory(t_grid.copy(), out)
