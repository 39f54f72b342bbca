"""Prior and posterior simulation-based calibration.

Prior SBC draws the generating parameters from the prior.  Posterior SBC
draws them from a base posterior fitted to observed data, simulates a new
dataset from each draw and refits on the observed data augmented with the
simulated set.  In both cases the rank of the generating value among ``S``
thinned refit draws is uniform on ``{0, ..., S}`` when inference is exact.

Each iteration reads its randomness from counter-based substreams keyed by
``(seed, iteration, role)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Iterator

import numpy as np

from .backends import Backend, Fit, HmcBackend, n_draws_default
from .models.base import Dataset, ModelError, ModelSpec, ParamVec
from .rng import ROLE_BASE, ROLE_RANK, ROLE_REFIT, ROLE_SIMULATE, ROLE_THETA, seed_path, substream
from .sampler import diagnostics

OK = "ok"
FLAGGED = "diagnostics-flagged"
FAILED = "failed"
STATUSES = (OK, FLAGGED, FAILED)

RHAT_LIMIT = 1.01


class SbcError(RuntimeError):
    """Campaign-level failure (no usable iteration, untrustworthy base posterior)."""


@dataclass(frozen=True)
class SbcConfig:
    iterations: int
    ranks_S: int = 100
    posterior_draws_per_iteration: int | None = None
    test_quantities: tuple[str, ...] = ()
    base_data_fraction: float = 1.0
    loglik_conditioning: str = "augmented"
    seed: int = 0
    backend: Backend = field(default_factory=HmcBackend)
    # Optional overrides for the base-posterior fit of posterior SBC; the base
    # model must be an equivalent parameterization of the refit model.
    base_backend: Backend | None = None
    base_model: ModelSpec | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.ranks_S < 10:
            raise ValueError("ranks_S must be at least 10")
        if not 0.0 < self.base_data_fraction <= 1.0:
            raise ValueError("base_data_fraction must lie in (0, 1]")
        if self.loglik_conditioning not in ("augmented", "new"):
            raise ValueError("loglik_conditioning must be 'augmented' or 'new'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.posterior_draws_per_iteration is not None and self.posterior_draws_per_iteration < self.ranks_S:
            raise ValueError("posterior_draws_per_iteration must be at least ranks_S")
        object.__setattr__(self, "test_quantities", tuple(self.test_quantities))

    def quantities(self, model: ModelSpec) -> tuple[str, ...]:
        return self.test_quantities or tuple(model.quantities)

    def n_draws(self) -> int:
        if self.posterior_draws_per_iteration is not None:
            return self.posterior_draws_per_iteration
        return max(self.ranks_S, n_draws_default(self.backend, self.ranks_S))


@dataclass
class IterationResult:
    iteration: int
    status: str
    ranks: dict[str, int]
    rhat_max: float | None = None
    ess_min: float | None = None
    divergence_count: int = 0
    theta_prime: dict[str, float] = field(default_factory=dict)
    seed_path: str = ""
    posterior_mean: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    cause: str | None = None

    def to_record(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else float(v)

        rec = {
            "iter": self.iteration,
            "status": self.status,
            "ranks": {k: int(v) for k, v in self.ranks.items()},
            "rhat_max": num(self.rhat_max),
            "ess_min": num(self.ess_min),
            "divergences": int(self.divergence_count),
            "theta_prime": {k: float(v) for k, v in self.theta_prime.items()},
            "seed_path": self.seed_path,
            "posterior_mean": {k: float(v) for k, v in self.posterior_mean.items()},
            "wall_time": round(float(self.wall_time), 6),
        }
        if self.cause is not None:
            rec["cause"] = self.cause
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "IterationResult":
        return cls(
            iteration=int(rec["iter"]),
            status=rec["status"],
            ranks={k: int(v) for k, v in rec.get("ranks", {}).items()},
            rhat_max=rec.get("rhat_max"),
            ess_min=rec.get("ess_min"),
            divergence_count=int(rec.get("divergences", 0)),
            theta_prime=dict(rec.get("theta_prime", {})),
            seed_path=rec.get("seed_path", ""),
            posterior_mean=dict(rec.get("posterior_mean", {})),
            wall_time=float(rec.get("wall_time", 0.0)),
            cause=rec.get("cause"),
        )


@dataclass
class RankEnsemble:
    """Ranks of every test quantity across the iterations of a campaign."""

    S: int
    quantities: tuple[str, ...]
    results: list[IterationResult]
    expected: int | None = None

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda r: r.iteration)

    def usable(self, include_flagged: bool = True) -> list[IterationResult]:
        keep = (OK, FLAGGED) if include_flagged else (OK,)
        return [r for r in self.results if r.status in keep]

    def ranks(self, quantity: str, include_flagged: bool = True) -> np.ndarray:
        if quantity not in self.quantities:
            raise KeyError(quantity)
        return np.array([r.ranks[quantity] for r in self.usable(include_flagged)], dtype=int)

    @property
    def N(self) -> int:
        return len(self.usable())

    def status_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in STATUSES}
        for r in self.results:
            counts[r.status] += 1
        return counts

    @property
    def missing(self) -> list[int]:
        if self.expected is None:
            return []
        have = {r.iteration for r in self.results}
        return [i for i in range(self.expected) if i not in have]


# -- ranks and test quantities ---------------------------------------------


def rank_of(value: float, draws, rng: np.random.Generator) -> int:
    """Number of draws below ``value``, with ties broken uniformly at random."""
    draws = np.asarray(draws, dtype=float)
    if draws.size < 1:
        raise ValueError("rank_of needs at least one draw")
    if not math.isfinite(value):
        raise ValueError(f"non-finite test-quantity value {value}")
    if not np.all(np.isfinite(draws)):
        raise ValueError("non-finite draw values")
    below = int(np.sum(draws < value))
    ties = int(np.sum(draws == value))
    return below + int(rng.integers(0, ties + 1))


def evaluate_test_quantities(
    theta: ParamVec | np.ndarray, draws: np.ndarray, conditioning_data: Dataset, model: ModelSpec,
    quantities: Iterable[str] | None = None,
) -> dict[str, tuple[float, np.ndarray]]:
    """True value and per-draw values of each test quantity.

    ``draws`` holds constrained parameter rows.  The joint log-likelihood
    quantity is evaluated on ``conditioning_data``.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ValueError("evaluate_test_quantities needs at least one draw")
    x = model.values(theta)
    out = {}
    for q in quantities or model.quantities:
        true = float(model.quantity_values(q, x[None, :], conditioning_data)[0])
        out[q] = (true, model.quantity_values(q, draws, conditioning_data))
    return out


def _diagnostic_indices(model: ModelSpec, quantities: Iterable[str]) -> list[int]:
    idx = [model.param_names.index(q) for q in quantities if q in model.param_names]
    return idx or list(range(model.dim))


def _status(rhat: float | None, ess: float | None, S: int) -> str:
    if rhat is None:
        return OK
    if not math.isfinite(rhat) or rhat > RHAT_LIMIT or not ess >= S:
        return FLAGGED
    return OK


def _score(
    model: ModelSpec, config: SbcConfig, i: int, theta: ParamVec, fit: Fit, loglik_data: Dataset
) -> IterationResult:
    S = config.ranks_S
    quantities = config.quantities(model)
    thinned = diagnostics.thin(fit.pooled(), S)
    values = evaluate_test_quantities(theta, thinned, loglik_data, model, quantities)
    rng = substream(config.seed, i, ROLE_RANK)
    ranks = {q: rank_of(true, vals, rng) for q, (true, vals) in values.items()}
    rhat, ess = fit.diagnostics(_diagnostic_indices(model, quantities))
    means = {q: float(np.mean(values[q][1])) for q in quantities if q in model.param_names}
    return IterationResult(
        iteration=i,
        status=_status(rhat, ess, S),
        ranks=ranks,
        rhat_max=rhat,
        ess_min=ess,
        divergence_count=fit.divergences,
        theta_prime=theta.as_dict(),
        seed_path=seed_path(config.seed, i),
        posterior_mean=means,
    )


def _failed(config: SbcConfig, i: int, theta: ParamVec | None, exc: BaseException) -> IterationResult:
    frame = traceback.extract_tb(exc.__traceback__)[-1] if exc.__traceback__ else None
    where = f" ({frame.name})" if frame else ""
    return IterationResult(
        iteration=i,
        status=FAILED,
        ranks={},
        theta_prime=theta.as_dict() if theta is not None else {},
        seed_path=seed_path(config.seed, i),
        cause=f"{type(exc).__name__}: {exc}{where}",
    )


# -- prior SBC ---------------------------------------------------------------


def prior_sbc_iteration(model: ModelSpec, config: SbcConfig, iteration: int) -> IterationResult:
    """One prior-SBC iteration: theta' ~ prior, y ~ p(y | theta'), refit, rank."""
    start = time.perf_counter()
    theta = None
    try:
        theta = model.prior_sample(substream(config.seed, iteration, ROLE_THETA))
        y = model.simulate(theta, substream(config.seed, iteration, ROLE_SIMULATE))
        fit = config.backend.fit(model, y, (config.seed, iteration, ROLE_REFIT), config.n_draws())
        result = _score(model, config, iteration, theta, fit, y)
    except Exception as exc:  # a failed iteration must never abort the campaign
        result = _failed(config, iteration, theta, exc)
    result.wall_time = time.perf_counter() - start
    return result


def run_iterations(
    task: Callable[[int], IterationResult], indices: Iterable[int], workers: int = 1
) -> Iterator[IterationResult]:
    """Run ``task`` over iteration indices, yielding results as they complete.

    With ``workers > 1`` the iterations run in a process pool; ``task`` must
    then be picklable.
    """
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        for i in indices:
            yield task(i)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task, i) for i in indices]
        for fut in as_completed(futures):
            yield fut.result()


def _ensemble(model: ModelSpec, config: SbcConfig, results: list[IterationResult]) -> RankEnsemble:
    ens = RankEnsemble(config.ranks_S, config.quantities(model), results, config.iterations)
    if ens.N == 0:
        causes = sorted({r.cause for r in results if r.cause})
        raise SbcError("every iteration failed: " + "; ".join(causes[:3]))
    return ens


def prior_sbc(
    model: ModelSpec, config: SbcConfig, workers: int = 1, on_result: Callable | None = None
) -> RankEnsemble:
    results = []
    task = partial(prior_sbc_iteration, model, config)
    for res in run_iterations(task, range(config.iterations), workers):
        results.append(res)
        if on_result is not None:
            on_result(res)
    return _ensemble(model, config, results)


# -- posterior SBC -----------------------------------------------------------


@dataclass
class BasePosterior:
    """Generating draws theta'_1..theta'_N for posterior SBC."""

    draws: list[ParamVec]
    data: Dataset
    rhat_max: float | None = None
    ess_min: float | None = None
    warnings: list[str] = field(default_factory=list)
    fit: Fit | None = None

    def __len__(self) -> int:
        return len(self.draws)

    def __getitem__(self, i: int) -> ParamVec:
        return self.draws[i]

    def __iter__(self):
        return iter(self.draws)


def base_data(y_obs: Dataset, config: SbcConfig) -> Dataset:
    return y_obs.head_fraction(config.base_data_fraction) if len(y_obs) else y_obs


def base_posterior(model: ModelSpec, y_obs: Dataset, config: SbcConfig, n_draws: int | None = None) -> BasePosterior:
    """Fit the base posterior and return exactly ``config.iterations`` draws.

    Exact backends draw theta'_i from the same substream prior SBC uses for
    its generating draw, so empty observed data reproduces prior SBC bit for
    bit.  MCMC backends must reach a bulk ESS of at least N on every
    parameter; the pooled chains are then thinned by a constant stride.
    """
    N = config.iterations
    backend = config.base_backend or config.backend
    source = config.base_model or model
    data = base_data(y_obs, config)
    if len(data):
        model.check_data(data)

    if backend.exact:
        rows = [backend.draw(source, data, substream(config.seed, i, ROLE_THETA), 1)[0] for i in range(N)]
        rows = model.convert_from(source, np.asarray(rows))
        return BasePosterior([model.param_vec(r) for r in rows], data)

    budget = n_draws or n_draws_default(backend, N)
    fit = backend.fit(source, data, (config.seed, 0, ROLE_BASE), budget)
    rhat, ess = fit.diagnostics(range(source.dim))
    warnings = []
    if not ess >= N:
        raise SbcError(
            f"base posterior bulk ESS {ess:.0f} is below N={N}; increase the base sampler's "
            "keep_draws or chains before running posterior SBC"
        )
    if not rhat <= RHAT_LIMIT:
        warnings.append(f"base posterior R-hat {rhat:.3f} exceeds {RHAT_LIMIT}")
    rows = model.convert_from(source, diagnostics.thin(fit.pooled(), N))
    return BasePosterior([model.param_vec(r) for r in rows], data, rhat, ess, warnings, fit)


def posterior_sbc_iteration(
    model: ModelSpec, y_obs: Dataset, theta_prime: ParamVec, config: SbcConfig, iteration: int
) -> IterationResult:
    """One posterior-SBC iteration on ``y_obs`` (already reduced to the base fraction)."""
    start = time.perf_counter()
    try:
        y_new = model.simulate(theta_prime, substream(config.seed, iteration, ROLE_SIMULATE))
        augmented = y_obs.concat(y_new)
        fit = config.backend.fit(model, augmented, (config.seed, iteration, ROLE_REFIT), config.n_draws())
        loglik_data = augmented if config.loglik_conditioning == "augmented" else y_new
        result = _score(model, config, iteration, theta_prime, fit, loglik_data)
    except Exception as exc:
        result = _failed(config, iteration, theta_prime, exc)
    result.wall_time = time.perf_counter() - start
    return result


def _posterior_task(model, y_obs, config, base: list[ParamVec], i: int) -> IterationResult:
    return posterior_sbc_iteration(model, y_obs, base[i], config, i)


def posterior_task(model: ModelSpec, base: BasePosterior, config: SbcConfig) -> Callable[[int], IterationResult]:
    return partial(_posterior_task, model, base.data, config, base.draws)


def posterior_sbc(
    model: ModelSpec, y_obs: Dataset, config: SbcConfig, workers: int = 1, on_result: Callable | None = None
) -> RankEnsemble:
    base = base_posterior(model, y_obs, config)
    results = []
    for res in run_iterations(posterior_task(model, base, config), range(config.iterations), workers):
        results.append(res)
        if on_result is not None:
            on_result(res)
    return _ensemble(model, config, results)


__all__ = [
    "BasePosterior",
    "FAILED",
    "FLAGGED",
    "IterationResult",
    "ModelError",
    "OK",
    "RankEnsemble",
    "SbcConfig",
    "SbcError",
    "base_posterior",
    "evaluate_test_quantities",
    "posterior_sbc",
    "posterior_sbc_iteration",
    "prior_sbc",
    "prior_sbc_iteration",
    "rank_of",
    "run_iterations",
]
