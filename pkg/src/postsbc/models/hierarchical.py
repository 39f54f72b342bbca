"""Two-level normal model in centered and non-centered parameterizations.

    y[i, j] ~ N(mu_j, sigma^2)
    mu_j    ~ N(mu0, tau^2)          (centered)
    mu_j    =  mu0 + tau * z_j,  z_j ~ N(0, 1)   (non-centered)
    mu0     ~ N(0, 1)
    sigma, tau ~ half-normal(0, 1)

Likelihood evaluations work from per-group sufficient statistics (count,
mean, within-group sum of squares), so augmented datasets with any number
of observations per group cost the same as the original.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..sampler.target import Target
from .base import LOG_SQRT_2PI, POSITIVE, REAL, Dataset, ModelError, ModelSpec, ParamVec, normal_logpdf

LOG2 = math.log(2.0)
HALF_LOG_2PI = LOG_SQRT_2PI


def group_stats(data: Dataset, n_groups: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-group count, mean and within-group sum of squared deviations."""
    g = np.asarray(data["group"], dtype=int)
    y = np.asarray(data["value"], dtype=float)
    if len(g) and (g.min() < 0 or g.max() >= n_groups):
        raise ModelError(f"group labels must lie in [0, {n_groups})")
    n = np.bincount(g, minlength=n_groups).astype(float)
    total = np.bincount(g, weights=y, minlength=n_groups)
    ybar = np.divide(total, n, out=np.zeros(n_groups), where=n > 0)
    dev = y - ybar[g]
    within = np.bincount(g, weights=dev * dev, minlength=n_groups)
    return n, ybar, within


@njit(cache=True, error_model="numpy")
def _group_loglik(mu, sigma, n, ybar, within):
    lp = 0.0
    inv2 = 1.0 / (sigma * sigma)
    for j in range(mu.shape[0]):
        if n[j] > 0:
            d = ybar[j] - mu[j]
            lp -= n[j] * (math.log(sigma) + 0.9189385332046727) + 0.5 * (within[j] + n[j] * d * d) * inv2
    return lp


@njit(cache=True, error_model="numpy")
def _centered_logp_grad(x, args):
    n, ybar, within = args
    J = n.shape[0]
    mu0 = x[0]
    tau = math.exp(x[1])
    sigma = math.exp(x[2])
    grad = np.zeros(J + 3)
    # priors on mu0, tau, sigma (half-normal carries log 2) and log-Jacobian x[1] + x[2]
    lp = -0.5 * mu0 * mu0 - 0.5 * tau * tau - 0.5 * sigma * sigma + 2.0 * math.log(2.0) - 3.0 * 0.9189385332046727
    lp += x[1] + x[2]
    grad[0] = -mu0
    grad[1] = -tau * tau + 1.0
    grad[2] = -sigma * sigma + 1.0
    inv_t2 = 1.0 / (tau * tau)
    inv_s2 = 1.0 / (sigma * sigma)
    log_sigma_term = math.log(sigma) + 0.9189385332046727
    log_tau_term = math.log(tau) + 0.9189385332046727
    for j in range(J):
        mu = x[3 + j]
        dm = mu - mu0
        lp -= 0.5 * dm * dm * inv_t2 + log_tau_term
        grad[0] += dm * inv_t2
        grad[1] += dm * dm * inv_t2 - 1.0
        g = -dm * inv_t2
        if n[j] > 0:
            d = ybar[j] - mu
            sq = within[j] + n[j] * d * d
            lp -= n[j] * log_sigma_term + 0.5 * sq * inv_s2
            grad[2] += sq * inv_s2 - n[j]
            g += n[j] * d * inv_s2
        grad[3 + j] = g
    return lp, grad


@njit(cache=True, error_model="numpy")
def _noncentered_logp_grad(x, args):
    n, ybar, within = args
    J = n.shape[0]
    mu0 = x[0]
    tau = math.exp(x[1])
    sigma = math.exp(x[2])
    grad = np.zeros(J + 3)
    lp = -0.5 * mu0 * mu0 - 0.5 * tau * tau - 0.5 * sigma * sigma + 2.0 * math.log(2.0) - 3.0 * 0.9189385332046727
    lp += x[1] + x[2]
    grad[0] = -mu0
    grad_tau = -tau
    grad[2] = -sigma * sigma + 1.0
    inv_s2 = 1.0 / (sigma * sigma)
    log_sigma_term = math.log(sigma) + 0.9189385332046727
    for j in range(J):
        z = x[3 + j]
        lp -= 0.5 * z * z + 0.9189385332046727
        g = -z
        if n[j] > 0:
            mu = mu0 + tau * z
            d = ybar[j] - mu
            sq = within[j] + n[j] * d * d
            lp -= n[j] * log_sigma_term + 0.5 * sq * inv_s2
            grad[2] += sq * inv_s2 - n[j]
            r = n[j] * d * inv_s2
            grad[0] += r
            grad_tau += r * z
            g += tau * r
        grad[3 + j] = g
    grad[1] = tau * grad_tau + 1.0
    return lp, grad


class HierarchicalModel(ModelSpec):
    """Hierarchical normal model with ``J`` groups of ``I`` observations."""

    data_kind = "grouped"
    quantities = ("mu0", "tau", "sigma", "loglik")

    def __init__(self, J: int = 50, I: int = 5, centered: bool = True):
        if J < 1 or I < 1:
            raise ModelError("J and I must be positive")
        self.J = int(J)
        self.I = int(I)
        self.centered = bool(centered)
        self.name = "hierarchical-centered" if centered else "hierarchical-noncentered"
        local = "mu" if centered else "z"
        self.param_names = ("mu0", "tau", "sigma") + tuple(f"{local}[{j + 1}]" for j in range(self.J))
        self.constraints = (REAL, POSITIVE, POSITIVE) + (REAL,) * self.J

    def describe(self) -> dict:
        return {"id": self.name, "J": self.J, "I": self.I}

    def group_means(self, x: np.ndarray) -> np.ndarray:
        """Group means mu_j for a constrained vector (or matrix of rows)."""
        x = np.asarray(x, dtype=float)
        local = x[..., 3:]
        if self.centered:
            return local
        return x[..., :1] + x[..., 1:2] * local

    def empty_data(self) -> Dataset:
        return Dataset.empty_like("grouped", {"n_groups": self.J})

    def convert_from(self, source, values: np.ndarray) -> np.ndarray:
        """Map draws between the centered and non-centered forms (z_j = (mu_j - mu0) / tau)."""
        values = np.asarray(values, dtype=float)
        if not isinstance(source, HierarchicalModel) or source.J != self.J:
            return super().convert_from(source, values)
        if source.centered == self.centered:
            return values
        out = values.copy()
        mu0, tau = values[..., :1], values[..., 1:2]
        if self.centered:
            out[..., 3:] = mu0 + tau * values[..., 3:]
        else:
            out[..., 3:] = (values[..., 3:] - mu0) / tau
        return out

    def prior_sample(self, rng: np.random.Generator) -> ParamVec:
        mu0 = rng.standard_normal()
        tau = abs(rng.standard_normal())
        sigma = abs(rng.standard_normal())
        z = rng.standard_normal(self.J)
        local = mu0 + tau * z if self.centered else z
        return self.param_vec(np.concatenate([[mu0, tau, sigma], local]))

    def simulate(self, params, rng: np.random.Generator) -> Dataset:
        x = self.values(params)
        if not np.all(np.isfinite(x)):
            raise ModelError("non-finite parameters")
        mu = self.group_means(x)
        y = mu[:, None] + x[2] * rng.standard_normal((self.J, self.I))
        return self.make_data(y)

    def make_data(self, y: np.ndarray) -> Dataset:
        """Dataset from a (J, I) array in group-major order."""
        y = np.asarray(y, dtype=float)
        J, I = y.shape
        group = np.repeat(np.arange(J), I)
        index = np.tile(np.arange(I), J)
        return Dataset("grouped", {"group": group, "index": index, "value": y.ravel()}, {"n_groups": J, "per_group": I})

    def log_prior(self, params) -> float:
        x = self.values(params)
        mu0, tau, sigma = x[0], x[1], x[2]
        if tau <= 0 or sigma <= 0:
            return -math.inf
        lp = normal_logpdf(mu0, 0.0, 1.0)
        lp += LOG2 + normal_logpdf(tau, 0.0, 1.0) + LOG2 + normal_logpdf(sigma, 0.0, 1.0)
        if self.centered:
            lp += np.sum(normal_logpdf(x[3:], mu0, tau))
        else:
            lp += np.sum(normal_logpdf(x[3:], 0.0, 1.0))
        return float(lp)

    def log_likelihood(self, params, data: Dataset) -> float:
        self.check_data(data)
        x = self.values(params)
        if x[2] <= 0 or (not self.centered and x[1] <= 0):
            raise ModelError("sigma and tau must be positive")
        n, ybar, within = group_stats(data, self.J)
        return float(_group_loglik(self.group_means(x), x[2], n, ybar, within))

    def loglik_batch(self, draws: np.ndarray, data: Dataset) -> np.ndarray:
        self.check_data(data)
        draws = np.atleast_2d(draws)
        n, ybar, within = group_stats(data, self.J)
        mu = self.group_means(draws)
        sigma = draws[:, 2:3]
        sq = within[None, :] + n[None, :] * (ybar[None, :] - mu) ** 2
        return -np.sum(n) * (np.log(sigma[:, 0]) + HALF_LOG_2PI) - 0.5 * np.sum(sq, axis=1) / sigma[:, 0] ** 2

    def target(self, data: Dataset) -> Target:
        self.check_data(data)
        args = group_stats(data, self.J)
        fn = _centered_logp_grad if self.centered else _noncentered_logp_grad
        return Target(self.dim, fn, args, self.param_names)


def generate_observed(model: HierarchicalModel, tau: float, sigma: float, rng: np.random.Generator, mu0: float = 0.0) -> tuple[Dataset, ParamVec]:
    """Observed dataset for a fixed (mu0, tau, sigma) with fresh group means.

    Group means are drawn from N(mu0, tau^2); the generating parameter vector
    is returned alongside the data.
    """
    z = rng.standard_normal(model.J)
    local = mu0 + tau * z if model.centered else z
    params = model.param_vec(np.concatenate([[mu0, tau, sigma], local]))
    return model.simulate(params, rng), params
