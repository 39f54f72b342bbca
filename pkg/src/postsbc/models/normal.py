"""Normal model with known observation noise and a conjugate normal prior.

Its posterior is available in closed form, which makes it the oracle used to
test every other part of the engine.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..sampler.target import Target
from .base import LOG_SQRT_2PI, REAL, Dataset, ModelError, ModelSpec, ParamVec, normal_logpdf


def conjugate_posterior(
    prior_mean: float, prior_sd: float, obs_sd: float, data: Dataset | np.ndarray
) -> tuple[float, float]:
    """Exact posterior (mean, sd) of a normal location with known noise."""
    if prior_sd <= 0 or obs_sd <= 0:
        raise ModelError("prior_sd and obs_sd must be positive")
    y = np.asarray(data["value"] if isinstance(data, Dataset) else data, dtype=float)
    if y.size == 0:
        return float(prior_mean), float(prior_sd)
    prior_prec = 1.0 / prior_sd**2
    data_prec = y.size / obs_sd**2
    post_var = 1.0 / (prior_prec + data_prec)
    post_mean = post_var * (prior_mean * prior_prec + y.sum() / obs_sd**2)
    return float(post_mean), float(math.sqrt(post_var))


@njit(cache=True, error_model="numpy")
def _normal_logp_grad(x, args):
    prior_mean, prior_sd, obs_sd, n, total, ss = args
    theta = x[0]
    dz = (theta - prior_mean) / prior_sd
    lp = -0.5 * dz * dz - math.log(prior_sd) - 0.9189385332046727
    # sum (y - theta)^2 = ss - 2 theta total + n theta^2
    resid2 = ss - 2.0 * theta * total + n * theta * theta
    lp += -0.5 * resid2 / obs_sd**2 - n * (math.log(obs_sd) + 0.9189385332046727)
    grad = np.empty(1)
    grad[0] = -dz / prior_sd + (total - n * theta) / obs_sd**2
    return lp, grad


class NormalModel(ModelSpec):
    """theta ~ N(prior_mean, prior_sd); y_k ~ N(theta, obs_sd), k = 1..n_obs."""

    name = "normal"
    data_kind = "normal"
    param_names = ("theta",)
    constraints = (REAL,)
    quantities = ("theta", "loglik")

    def __init__(self, prior_mean: float = 0.0, prior_sd: float = 1.0, obs_sd: float = 1.0, n_obs: int = 5):
        if prior_sd <= 0 or obs_sd <= 0:
            raise ModelError("prior_sd and obs_sd must be positive")
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.obs_sd = float(obs_sd)
        self.n_obs = int(n_obs)

    def describe(self) -> dict:
        return {
            "id": self.name,
            "prior_mean": self.prior_mean,
            "prior_sd": self.prior_sd,
            "obs_sd": self.obs_sd,
            "n_obs": self.n_obs,
        }

    def prior_sample(self, rng: np.random.Generator) -> ParamVec:
        theta = self.prior_mean + self.prior_sd * rng.standard_normal()
        return self.param_vec([theta])

    def simulate(self, params, rng: np.random.Generator) -> Dataset:
        theta = self.values(params)[0]
        if not np.isfinite(theta):
            raise ModelError("non-finite theta")
        y = theta + self.obs_sd * rng.standard_normal(self.n_obs)
        return self.make_data(y)

    @staticmethod
    def make_data(values) -> Dataset:
        y = np.asarray(values, dtype=float)
        return Dataset("normal", {"index": np.arange(y.size), "value": y})

    def log_prior(self, params) -> float:
        return float(normal_logpdf(self.values(params)[0], self.prior_mean, self.prior_sd))

    def log_likelihood(self, params, data: Dataset) -> float:
        self.check_data(data)
        theta = self.values(params)[0]
        return float(np.sum(normal_logpdf(data["value"], theta, self.obs_sd)))

    def loglik_batch(self, draws: np.ndarray, data: Dataset) -> np.ndarray:
        self.check_data(data)
        theta = np.atleast_2d(draws)[:, 0]
        y = data["value"]
        n = y.size
        resid2 = np.sum(y * y) - 2.0 * theta * np.sum(y) + n * theta * theta
        return -0.5 * resid2 / self.obs_sd**2 - n * (math.log(self.obs_sd) + LOG_SQRT_2PI)

    def target(self, data: Dataset) -> Target:
        self.check_data(data)
        y = np.asarray(data["value"], dtype=float)
        args = (self.prior_mean, self.prior_sd, self.obs_sd, float(y.size), float(y.sum()), float(y @ y))
        return Target(1, _normal_logp_grad, args, self.param_names)

    def exact_posterior(self, data: Dataset) -> tuple[float, float]:
        return conjugate_posterior(self.prior_mean, self.prior_sd, self.obs_sd, data)
