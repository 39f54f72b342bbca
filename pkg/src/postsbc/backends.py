"""Inference backends: the algorithms whose calibration is being checked.

Every backend turns (model, data) into a :class:`Fit` holding constrained
posterior draws shaped ``(chains, draws, dim)``.  Exact backends produce
independent draws and carry no convergence diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models.base import Dataset, ModelError, ModelSpec
from .rng import substream
from .sampler import diagnostics
from .sampler.hmc import SamplerConfig, hmc_chain, rwm_chain


@dataclass(eq=False)
class Fit:
    draws: np.ndarray
    exact: bool = False
    divergences: int = 0
    step_sizes: tuple[float, ...] = ()
    extra: dict = field(default_factory=dict)

    def pooled(self) -> np.ndarray:
        """Chain-major concatenation of the draws."""
        c, n, d = self.draws.shape
        return self.draws.reshape(c * n, d)

    def diagnostics(self, indices) -> tuple[float | None, float | None]:
        if self.exact:
            return None, None
        return diagnostics.summarize(self.draws, indices)


class Backend:
    name = "backend"
    exact = False

    def fit(self, model: ModelSpec, data: Dataset, path: tuple[int, ...], n_draws: int) -> Fit:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.name}


class ExactConjugateBackend(Backend):
    """Independent draws from the closed-form posterior of :class:`NormalModel`."""

    name = "exact"
    exact = True

    def _posterior(self, model, data):
        if not hasattr(model, "exact_posterior"):
            raise ModelError(f"{model.name} has no closed-form posterior")
        return model.exact_posterior(data)

    def draw(self, model: ModelSpec, data: Dataset, rng: np.random.Generator, size: int) -> np.ndarray:
        mean, sd = self._posterior(model, data)
        return (mean + sd * rng.standard_normal(size))[:, None]

    def fit(self, model, data, path, n_draws) -> Fit:
        draws = self.draw(model, data, substream(*path), n_draws)
        return Fit(draws[None, :, :], exact=True)


class ShiftedConjugateBackend(ExactConjugateBackend):
    """Deliberately biased oracle.

    Draws come from N(m - offset_sd * s, s), where (m, s) is the exact
    posterior, so the generating parameter sits ``offset_sd`` posterior SDs
    above the approximation's centre on average.
    """

    name = "shifted"

    def __init__(self, offset_sd: float = 0.5):
        self.offset_sd = float(offset_sd)

    def draw(self, model, data, rng, size):
        mean, sd = self._posterior(model, data)
        return (mean - self.offset_sd * sd + sd * rng.standard_normal(size))[:, None]

    def describe(self) -> dict:
        return {"kind": self.name, "offset_sd": self.offset_sd}


class HmcBackend(Backend):
    name = "hmc"

    def __init__(self, config: SamplerConfig | None = None):
        self.config = config or SamplerConfig()

    def _chain(self, target, rng):
        return hmc_chain(target, self.config, rng)

    def fit(self, model, data, path, n_draws=None) -> Fit:
        target = model.target(data)
        chains = [self._chain(target, substream(*path, c)) for c in range(self.config.chains)]
        unc = np.stack([ch.draws for ch in chains])
        cons, _ = model.to_constrained(unc.reshape(-1, model.dim))
        return Fit(
            cons.reshape(unc.shape),
            exact=False,
            divergences=int(sum(ch.divergence_count for ch in chains)),
            step_sizes=tuple(ch.step_size for ch in chains),
            extra={
                "accept": float(np.mean([ch.mean_accept for ch in chains])),
                "warmup_divergences": int(sum(ch.warmup_divergences for ch in chains)),
                "mean_leapfrog": float(np.mean([ch.n_leapfrog.mean() for ch in chains])),
                "chains": chains,
            },
        )

    def describe(self) -> dict:
        return {"kind": self.name, **{k: v for k, v in self.config.__dict__.items() if k != "seed"}}


class RwmBackend(HmcBackend):
    name = "rwm"

    def _chain(self, target, rng):
        return rwm_chain(target, self.config, rng)


def build_backend(spec: dict) -> Backend:
    """Backend from a config mapping such as ``{"kind": "hmc", "chains": 4}``."""
    spec = dict(spec)
    kind = spec.pop("kind", "hmc")
    if kind in ("exact", "shifted"):
        spec.pop("seed", None)  # exact draws are keyed by the campaign seed alone
    if kind == "exact":
        return ExactConjugateBackend()
    if kind == "shifted":
        return ShiftedConjugateBackend(**spec)
    if kind in ("hmc", "rwm"):
        cfg = SamplerConfig(**spec)
        return HmcBackend(cfg) if kind == "hmc" else RwmBackend(cfg)
    raise ValueError(f"unknown backend kind {kind!r}")


def n_draws_default(backend: Backend, S: int) -> int:
    if isinstance(backend, HmcBackend):
        return backend.config.chains * backend.config.keep_draws
    return S


