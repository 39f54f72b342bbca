"""Log-density targets handed to the samplers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba.core.registry import CPUDispatcher


@dataclass(frozen=True, eq=False)
class Target:
    """Unconstrained log density with gradient.

    ``fn(x, args)`` returns ``(logp, grad)``.  When ``fn`` is a numba
    ``njit`` function the HMC sampler runs whole trajectories in compiled
    code; any other callable goes through the pure-Python leapfrog.
    """

    dim: int
    fn: Callable
    args: tuple = ()
    names: tuple[str, ...] | None = None

    def logp_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        lp, grad = self.fn(np.asarray(x, dtype=float), self.args)
        return float(lp), np.asarray(grad, dtype=float)

    def logp(self, x: np.ndarray) -> float:
        return self.logp_grad(x)[0]

    @property
    def jitted(self) -> bool:
        return isinstance(self.fn, CPUDispatcher)

    @classmethod
    def from_callables(
        cls,
        dim: int,
        logp: Callable[[np.ndarray], float],
        grad: Callable[[np.ndarray], np.ndarray] | None = None,
        names: tuple[str, ...] | None = None,
    ) -> "Target":
        """Wrap plain Python callables; the gradient defaults to central differences."""
        from .gradients import finite_diff_grad

        def fn(x, _args):
            lp = float(logp(x))
            if not np.isfinite(lp):
                return lp, np.full(dim, np.nan)
            if grad is not None:
                return lp, np.asarray(grad(x), dtype=float)
            try:
                return lp, finite_diff_grad(logp, x)
            except FloatingPointError:
                return lp, np.full(dim, np.nan)

        return cls(dim, fn, (), names)
