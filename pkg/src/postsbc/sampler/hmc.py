"""Static-trajectory Hamiltonian Monte Carlo with jittered path length.

Warmup runs dual averaging of the step size towards ``target_accept`` and
estimates a diagonal mass matrix from draws collected in the second half of
warmup.  Transitions whose Hamiltonian error exceeds the divergence threshold
anywhere along the trajectory are rejected and counted as divergent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from numba import njit

from .target import Target


class SamplerError(RuntimeError):
    """Initialization failure or a warmup in which every transition diverged."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_draws: int = 1000
    keep_draws: int = 1000
    target_accept: float = 0.99
    max_leapfrog_steps: int = 256
    path_length: float = 2.0
    path_length_jitter: float = 0.5
    divergence_threshold: float = 50.0
    init_radius: float = 2.0
    fixed_step_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.keep_draws < 1 or self.warmup_draws < 0:
            raise ValueError("chains and keep_draws must be positive, warmup_draws non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_leapfrog_steps < 1:
            raise ValueError("max_leapfrog_steps must be positive")
        if not 0.0 <= self.path_length_jitter <= 1.0:
            raise ValueError("path_length_jitter must lie in [0, 1]")
        if self.path_length <= 0 or self.divergence_threshold <= 0:
            raise ValueError("path_length and divergence_threshold must be positive")

    def with_(self, **changes) -> "SamplerConfig":
        return replace(self, **changes)


@dataclass(eq=False)
class Chain:
    draws: np.ndarray  # keep_draws x dim, unconstrained
    logp: np.ndarray
    accept_rates: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    mass_diag: np.ndarray
    warmup_divergences: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def divergence_count(self) -> int:
        return int(np.sum(self.divergent))

    @property
    def mean_accept(self) -> float:
        return float(np.mean(self.accept_rates))


def leapfrog(grad: Callable, q, p, eps: float, L: int, inv_mass=None) -> tuple[np.ndarray, np.ndarray]:
    """``L`` leapfrog steps for H(q, p) = -log pi(q) + p' M^-1 p / 2.

    ``grad`` returns the gradient of the log density.
    """
    if eps <= 0 or L < 1:
        raise ValueError("eps must be positive and L at least 1")
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    inv_mass = np.ones_like(q) if inv_mass is None else np.asarray(inv_mass, dtype=float)
    g = np.asarray(grad(q), dtype=float)
    for _ in range(L):
        p = p + 0.5 * eps * g
        q = q + eps * inv_mass * p
        g = np.asarray(grad(q), dtype=float)
        p = p + 0.5 * eps * g
    return q, p


def _python_trajectory(fn, q, p, eps, n_steps, inv_mass, args, grad0, h0, threshold):
    g = grad0
    lp = math.nan
    err = 0.0
    for _ in range(n_steps):
        p = p + 0.5 * eps * g
        q = q + eps * inv_mass * p
        lp, g = fn(q, args)
        lp = float(lp)
        g = np.asarray(g, dtype=float)
        p = p + 0.5 * eps * g
        h = -lp + 0.5 * float(np.sum(inv_mass * p * p))
        err = h - h0
        if not math.isfinite(h) or err > threshold or not np.all(np.isfinite(g)):
            return q, p, lp, g, err, True
    return q, p, lp, g, err, False


@lru_cache(maxsize=None)
def _compiled_trajectory(fn):
    @njit(error_model="numpy")
    def trajectory(q, p, eps, n_steps, inv_mass, args, grad0, h0, threshold):
        g = grad0
        lp = np.nan
        err = 0.0
        for _ in range(n_steps):
            p = p + 0.5 * eps * g
            q = q + eps * inv_mass * p
            lp, g = fn(q, args)
            p = p + 0.5 * eps * g
            h = -lp + 0.5 * np.sum(inv_mass * p * p)
            err = h - h0
            if not np.isfinite(h) or err > threshold or not np.all(np.isfinite(g)):
                return q, p, lp, g, err, True
        return q, p, lp, g, err, False

    return trajectory


def trajectory_fn(target: Target):
    if target.jitted:
        return _compiled_trajectory(target.fn)
    fn = target.fn
    return lambda *a: _python_trajectory(fn, *a)


class DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, eps0: float, delta: float, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(10.0 * eps0)
        self.delta = delta
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.hbar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.hbar = (1.0 - eta) * self.hbar + eta * (self.delta - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def initialize(target: Target, rng: np.random.Generator, radius: float = 2.0, attempts: int = 100):
    """Uniform(-radius, radius) start with finite density and gradient."""
    for _ in range(attempts):
        q = rng.uniform(-radius, radius, size=target.dim)
        try:
            lp, g = target.logp_grad(q)
        except (FloatingPointError, ValueError, ArithmeticError):
            continue
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, g
    raise SamplerError(f"could not find a finite starting point in {attempts} attempts")


def _find_reasonable_step(traj, target, q, lp, g, inv_mass, rng, threshold) -> float:
    eps = 1.0
    p = rng.standard_normal(target.dim) / np.sqrt(inv_mass)
    h0 = -lp + 0.5 * float(np.sum(inv_mass * p * p))

    def log_accept(e):
        _, _, _, _, err, div = traj(q.copy(), p.copy(), e, 1, inv_mass, target.args, g, h0, threshold)
        return -math.inf if div or not math.isfinite(err) else -err

    direction = 1.0 if log_accept(eps) > math.log(0.5) else -1.0
    for _ in range(100):
        la = log_accept(eps)
        if direction > 0 and not la > math.log(0.5):
            break
        if direction < 0 and la > math.log(0.5):
            break
        eps = eps * 2.0 if direction > 0 else eps * 0.5
    return min(max(eps, 1e-8), 1e3)


def _n_steps(eps: float, config: SamplerConfig, rng: np.random.Generator) -> int:
    base = min(config.max_leapfrog_steps, max(1, int(math.ceil(config.path_length / eps))))
    lo = max(1, int(math.floor(base * (1.0 - config.path_length_jitter))))
    hi = min(config.max_leapfrog_steps, max(lo, int(math.ceil(base * (1.0 + config.path_length_jitter)))))
    return int(rng.integers(lo, hi + 1))


def adaptation_windows(W: int) -> list[tuple[int, int]]:
    """Warmup iterations whose draws feed the diagonal mass estimate."""
    if W < 20:
        return []
    return [(W // 2, int(0.9 * W))]


def hmc_chain(target: Target, config: SamplerConfig, rng: np.random.Generator) -> Chain:
    """Run one adapted HMC chain and return its post-warmup draws."""
    traj = trajectory_fn(target)
    dim = target.dim
    q, lp, g = initialize(target, rng, config.init_radius)
    inv_mass = np.ones(dim)
    threshold = config.divergence_threshold
    W = config.warmup_draws
    adapt = config.fixed_step_size is None

    if adapt:
        eps = _find_reasonable_step(traj, target, q, lp, g, inv_mass, rng, threshold)
        da = DualAveraging(eps, config.target_accept)
    else:
        eps = float(config.fixed_step_size)
        da = None
    windows = adaptation_windows(W)
    window_ends = {end - 1 for _, end in windows}
    collected: list[np.ndarray] = []

    K = config.keep_draws
    draws = np.empty((K, dim))
    logps = np.empty(K)
    accepts = np.empty(K)
    divergent = np.zeros(K, dtype=bool)
    n_leap = np.empty(K, dtype=np.int64)
    warm_div = 0

    for it in range(W + K):
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        n = _n_steps(eps, config, rng)
        u = rng.uniform()
        h0 = -lp + 0.5 * float(np.sum(inv_mass * p0 * p0))
        q1, _, lp1, g1, err, div = traj(q.copy(), p0, eps, n, inv_mass, target.args, g, h0, threshold)
        if div:
            acc = 0.0
        else:
            acc = 1.0 if err <= 0 else math.exp(-err)
            if u < acc:
                q, lp, g = q1, float(lp1), np.asarray(g1)
        if it < W:
            warm_div += int(div)
            if adapt:
                eps = da.update(acc)
                if any(a <= it < b for a, b in windows):
                    collected.append(q.copy())
                if it in window_ends and len(collected) >= 10:
                    var = np.var(np.asarray(collected), axis=0, ddof=1)
                    var = var + 1e-3 * float(np.mean(var))
                    if np.all(np.isfinite(var)) and np.all(var > 0):
                        inv_mass = var
                    collected = []
                    eps = _find_reasonable_step(traj, target, q, lp, g, inv_mass, rng, threshold)
                    da = DualAveraging(eps, config.target_accept)
                if it == W - 1:
                    eps = da.final
        else:
            k = it - W
            draws[k] = q
            logps[k] = lp
            accepts[k] = acc
            divergent[k] = div
            n_leap[k] = n
    if W > 0 and warm_div == W:
        raise SamplerError("every warmup transition diverged")
    return Chain(draws, logps, accepts, divergent, n_leap, float(eps), 1.0 / inv_mass, warm_div)


def rwm_chain(target: Target, config: SamplerConfig, rng: np.random.Generator, target_rate: float = 0.234) -> Chain:
    """Gaussian random-walk Metropolis with Robbins-Monro scale adaptation during warmup."""
    dim = target.dim
    q, lp, _ = initialize(target, rng, config.init_radius)
    log_scale = math.log(2.38 / math.sqrt(dim))
    W = config.warmup_draws
    K = config.keep_draws
    draws = np.empty((K, dim))
    logps = np.empty(K)
    accepts = np.empty(K)
    for it in range(W + K):
        z = rng.standard_normal(dim)
        u = rng.uniform()
        prop = q + math.exp(log_scale) * z
        lp_prop = target.logp(prop)
        acc = metropolis_accept_prob(lp, lp_prop)
        if u < acc:
            q, lp = prop, lp_prop
        if it < W:
            log_scale += (acc - target_rate) / (it + 1) ** 0.6
        else:
            draws[it - W] = q
            logps[it - W] = lp
            accepts[it - W] = acc
    return Chain(
        draws,
        logps,
        accepts,
        np.zeros(K, dtype=bool),
        np.zeros(K, dtype=np.int64),
        math.exp(log_scale),
        np.ones(dim),
    )


def metropolis_accept_prob(logp_current: float, logp_proposal: float) -> float:
    """Acceptance probability of a symmetric proposal: min(1, pi(x')/pi(x))."""
    if not math.isfinite(logp_proposal):
        return 0.0
    diff = logp_proposal - logp_current
    return 1.0 if diff >= 0 else math.exp(diff)
