"""Lotka-Volterra predator-prey model with log-normal pelt observations.

    dH/dt = alpha H - beta H L
    dL/dt = -gamma L + delta H L
    log(hare_t)  ~ N(log H_t, sigma_h)
    log(lynx_t)  ~ N(log L_t, sigma_l)

Priors: alpha, gamma ~ N(1, 0.5) and beta, delta ~ N(0.05, 0.05), both
truncated to the positive half-line; log sigma_h, log sigma_l ~ N(-1, 1);
log h0, log l0 ~ N(log 30, 1).  Observation times are years counted from
``t0`` (default 1900); the observation at ``t0`` measures the initial state.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np
from numba import njit
from scipy.special import log_ndtr

from ..sampler.target import Target
from .base import LOG_SQRT_2PI, POSITIVE, Dataset, ModelError, ModelSpec, ParamVec
from .ode import IntegrationError, Trajectory, grid_steps, rk4_solve

STEP = 0.01
DEFAULT_T0 = 1900.0
N_YEARS = 21

RATE_MEAN = (1.0, 0.05, 1.0, 0.05)
RATE_SD = (0.5, 0.05, 0.5, 0.05)
LOG_SIGMA_MEAN = -1.0
LOG_INIT_MEAN = math.log(30.0)

PARAM_NAMES = ("alpha", "beta", "gamma", "delta", "sigma_h", "sigma_l", "h0", "l0")
# Reference scales of the log transforms: u = log(value) - log_scale.
LOG_SCALES = np.array(
    [0.0, math.log(0.05), 0.0, math.log(0.05), LOG_SIGMA_MEAN, LOG_SIGMA_MEAN, LOG_INIT_MEAN, LOG_INIT_MEAN]
)
# log of the positive-truncation mass of each rate prior
LOG_TRUNC = np.array([log_ndtr(m / s) for m, s in zip(RATE_MEAN, RATE_SD)])


@dataclass(frozen=True)
class LvParams:
    alpha: float
    beta: float
    gamma: float
    delta: float
    sigma_h: float
    sigma_l: float
    h0: float
    l0: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(np.isfinite(vals)) or min(vals) <= 0:
            raise ModelError(f"Lotka-Volterra parameters must be finite and positive, got {vals}")

    @classmethod
    def from_vector(cls, x) -> "LvParams":
        return cls(*(float(v) for v in x))

    def vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def lv_rhs(state, params: LvParams) -> np.ndarray:
    H, L = (float(v) for v in state)
    if not (np.isfinite(H) and np.isfinite(L)):
        raise ModelError("non-finite state")
    return np.array([params.alpha * H - params.beta * H * L, -params.gamma * L + params.delta * H * L])


def lv_invariant(state, params: LvParams) -> float:
    """Conserved quantity delta H - gamma ln H + beta L - alpha ln L."""
    H, L = (float(v) for v in state)
    if H <= 0 or L <= 0:
        raise ModelError("invariant requires positive populations")
    return params.delta * H - params.gamma * math.log(H) + params.beta * L - params.alpha * math.log(L)


def lv_solve(params: LvParams, times, h: float = STEP, t0: float = 0.0) -> Trajectory:
    """Reference (pure numpy) solve of the dynamics on ``times``, starting at ``t0``."""
    times = np.asarray(times, dtype=float)
    grid = np.concatenate([[t0], times]) if times[0] != t0 else times
    traj = rk4_solve(lambda y: lv_rhs(y, params), [params.h0, params.l0], grid, h, positive=True)
    if times[0] != t0:
        return Trajectory(times, traj.states[1:])
    return traj


@njit(cache=True, error_model="numpy")
def _lv_solve(alpha, beta, gamma, delta, h0, l0, steps, h):
    """RK4 states at the (sorted) step counts; ok=False on overflow or non-positivity."""
    out = np.empty((steps.shape[0], 2))
    H = h0
    L = l0
    done = 0
    for idx in range(steps.shape[0]):
        target = steps[idx]
        while done < target:
            k1h = alpha * H - beta * H * L
            k1l = -gamma * L + delta * H * L
            H2 = H + 0.5 * h * k1h
            L2 = L + 0.5 * h * k1l
            k2h = alpha * H2 - beta * H2 * L2
            k2l = -gamma * L2 + delta * H2 * L2
            H3 = H + 0.5 * h * k2h
            L3 = L + 0.5 * h * k2l
            k3h = alpha * H3 - beta * H3 * L3
            k3l = -gamma * L3 + delta * H3 * L3
            H4 = H + h * k3h
            L4 = L + h * k3l
            k4h = alpha * H4 - beta * H4 * L4
            k4l = -gamma * L4 + delta * H4 * L4
            H = H + (h / 6.0) * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
            L = L + (h / 6.0) * (k1l + 2.0 * k2l + 2.0 * k3l + k4l)
            done += 1
            if not (H > 0.0 and L > 0.0 and H < 1e300 and L < 1e300):
                return out, False
        out[idx, 0] = H
        out[idx, 1] = L
    return out, True


@njit(cache=True, error_model="numpy")
def _lv_sq_resid(p, args):
    """Sum of squared log residuals for hares and lynxes; -1 on failure."""
    steps, obs_idx, log_hare, log_lynx, h, log_scales, log_trunc = args
    states, ok = _lv_solve(p[0], p[1], p[2], p[3], p[6], p[7], steps, h)
    if not ok:
        return -1.0, -1.0
    ssh = 0.0
    ssl = 0.0
    for k in range(obs_idx.shape[0]):
        i = obs_idx[k]
        dh = log_hare[k] - math.log(states[i, 0])
        dl = log_lynx[k] - math.log(states[i, 1])
        ssh += dh * dh
        ssl += dl * dl
    return ssh, ssl


@njit(cache=True, error_model="numpy")
def _lv_assemble(u, p, ssh, ssl, args):
    steps, obs_idx, log_hare, log_lynx, h, log_scales, log_trunc = args
    if ssh < 0.0:
        return -np.inf
    c = 0.9189385332046727
    lp = 0.0
    # truncated-normal rate priors
    for k, m, s in ((0, 1.0, 0.5), (1, 0.05, 0.05), (2, 1.0, 0.5), (3, 0.05, 0.05)):
        z = (p[k] - m) / s
        lp += -0.5 * z * z - math.log(s) - c - log_trunc[k]
    # log-normal priors on noise scales and initial populations
    for k, m in ((4, -1.0), (5, -1.0), (6, log_scales[6]), (7, log_scales[7])):
        lx = math.log(p[k])
        z = lx - m
        lp += -0.5 * z * z - c - lx
    n = obs_idx.shape[0]
    lp += -0.5 * ssh / (p[4] * p[4]) - n * (math.log(p[4]) + c)
    lp += -0.5 * ssl / (p[5] * p[5]) - n * (math.log(p[5]) + c)
    # log-Jacobian of p = exp(u + log_scale)
    for k in range(8):
        lp += u[k] + log_scales[k]
    return lp


@njit(cache=True, error_model="numpy")
def _lv_logp(u, args):
    log_scales = args[5]
    p = np.exp(u + log_scales)
    ssh, ssl = _lv_sq_resid(p, args)
    return _lv_assemble(u, p, ssh, ssl, args)


@njit(cache=True, error_model="numpy")
def _lv_logp_grad_fd(u, args):
    """Log density with a central-difference gradient (step 1e-6 max(1, |u_k|)).

    The noise-scale coordinates reuse the base ODE solve since the residuals
    do not depend on them.
    """
    log_scales = args[5]
    p = np.exp(u + log_scales)
    ssh, ssl = _lv_sq_resid(p, args)
    lp = _lv_assemble(u, p, ssh, ssl, args)
    grad = np.empty(8)
    if not np.isfinite(lp):
        grad[:] = np.nan
        return lp, grad
    for k in range(8):
        step = 1e-6 * max(1.0, abs(u[k]))
        up = u.copy()
        um = u.copy()
        up[k] += step
        um[k] -= step
        pp = np.exp(up + log_scales)
        pm = np.exp(um + log_scales)
        if k == 4 or k == 5:
            fp = _lv_assemble(up, pp, ssh, ssl, args)
            fm = _lv_assemble(um, pm, ssh, ssl, args)
        else:
            a, b = _lv_sq_resid(pp, args)
            fp = _lv_assemble(up, pp, a, b, args)
            a, b = _lv_sq_resid(pm, args)
            fm = _lv_assemble(um, pm, a, b, args)
        grad[k] = (fp - fm) / (up[k] - um[k])
    return lp, grad


@njit(cache=True, error_model="numpy")
def _lv_rhs_sens(H, L, S, alpha, beta, gamma, delta, dy, dS):
    """Dynamics and forward-sensitivity right-hand side.

    S[i, k] = d state_i / d (alpha, beta, gamma, delta, h0, l0)_k.
    """
    dy[0] = alpha * H - beta * H * L
    dy[1] = -gamma * L + delta * H * L
    j00 = alpha - beta * L
    j01 = -beta * H
    j10 = delta * L
    j11 = -gamma + delta * H
    for k in range(6):
        dS[0, k] = j00 * S[0, k] + j01 * S[1, k]
        dS[1, k] = j10 * S[0, k] + j11 * S[1, k]
    dS[0, 0] += H
    dS[0, 1] -= H * L
    dS[1, 2] -= L
    dS[1, 3] += H * L


@njit(cache=True, error_model="numpy")
def _lv_solve_sens(alpha, beta, gamma, delta, h0, l0, steps, h):
    """RK4 states and their parameter sensitivities at the sorted step counts.

    RK4 applied to the augmented system differentiates the discrete RK4 map
    exactly, so the sensitivities match the solver output to rounding.
    """
    n = steps.shape[0]
    states = np.empty((n, 2))
    sens = np.empty((n, 2, 6))
    y = np.array([h0, l0])
    S = np.zeros((2, 6))
    S[0, 4] = 1.0
    S[1, 5] = 1.0
    k1 = np.empty(2)
    k2 = np.empty(2)
    k3 = np.empty(2)
    k4 = np.empty(2)
    K1 = np.empty((2, 6))
    K2 = np.empty((2, 6))
    K3 = np.empty((2, 6))
    K4 = np.empty((2, 6))
    Sy = np.empty((2, 6))
    done = 0
    for idx in range(n):
        while done < steps[idx]:
            H = y[0]
            L = y[1]
            _lv_rhs_sens(H, L, S, alpha, beta, gamma, delta, k1, K1)
            for a in range(2):
                for k in range(6):
                    Sy[a, k] = S[a, k] + 0.5 * h * K1[a, k]
            _lv_rhs_sens(H + 0.5 * h * k1[0], L + 0.5 * h * k1[1], Sy, alpha, beta, gamma, delta, k2, K2)
            for a in range(2):
                for k in range(6):
                    Sy[a, k] = S[a, k] + 0.5 * h * K2[a, k]
            _lv_rhs_sens(H + 0.5 * h * k2[0], L + 0.5 * h * k2[1], Sy, alpha, beta, gamma, delta, k3, K3)
            for a in range(2):
                for k in range(6):
                    Sy[a, k] = S[a, k] + h * K3[a, k]
            _lv_rhs_sens(H + h * k3[0], L + h * k3[1], Sy, alpha, beta, gamma, delta, k4, K4)
            y[0] = H + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            y[1] = L + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            for a in range(2):
                for k in range(6):
                    S[a, k] += (h / 6.0) * (K1[a, k] + 2.0 * K2[a, k] + 2.0 * K3[a, k] + K4[a, k])
            done += 1
            if not (y[0] > 0.0 and y[1] > 0.0 and y[0] < 1e300 and y[1] < 1e300):
                return states, sens, False
        states[idx, 0] = y[0]
        states[idx, 1] = y[1]
        for a in range(2):
            for k in range(6):
                sens[idx, a, k] = S[a, k]
    return states, sens, True


@njit(cache=True, error_model="numpy")
def _lv_logp_grad(u, args):
    """Log density with its exact gradient via forward sensitivities."""
    steps, obs_idx, log_hare, log_lynx, h, log_scales, log_trunc = args
    p = np.exp(u + log_scales)
    grad = np.empty(8)
    states, sens, ok = _lv_solve_sens(p[0], p[1], p[2], p[3], p[6], p[7], steps, h)
    if not ok:
        grad[:] = np.nan
        return -np.inf, grad
    ssh = 0.0
    ssl = 0.0
    # d(loglik)/d(alpha, beta, gamma, delta, h0, l0) on the natural scale
    g6 = np.zeros(6)
    inv_h = 1.0 / (p[4] * p[4])
    inv_l = 1.0 / (p[5] * p[5])
    for k in range(obs_idx.shape[0]):
        i = obs_idx[k]
        H = states[i, 0]
        L = states[i, 1]
        dh = log_hare[k] - math.log(H)
        dl = log_lynx[k] - math.log(L)
        ssh += dh * dh
        ssl += dl * dl
        for j in range(6):
            g6[j] += dh * inv_h * sens[i, 0, j] / H + dl * inv_l * sens[i, 1, j] / L
    lp = _lv_assemble(u, p, ssh, ssl, args)
    n = obs_idx.shape[0]
    # rates: truncated normal prior plus log-Jacobian
    for k, m, s in ((0, 1.0, 0.5), (1, 0.05, 0.05), (2, 1.0, 0.5), (3, 0.05, 0.05)):
        grad[k] = (g6[k] - (p[k] - m) / (s * s)) * p[k] + 1.0
    # noise scales: log-normal prior and Jacobian combine to -(log sigma - m)
    grad[4] = ssh * inv_h - n - (math.log(p[4]) + 1.0)
    grad[5] = ssl * inv_l - n - (math.log(p[5]) + 1.0)
    grad[6] = g6[4] * p[6] - (math.log(p[6]) - log_scales[6])
    grad[7] = g6[5] * p[7] - (math.log(p[7]) - log_scales[7])
    return lp, grad


def _pelt_columns(data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    year = np.asarray(data["year"], dtype=float)
    hare = np.asarray(data["hare_pelts"], dtype=float)
    lynx = np.asarray(data["lynx_pelts"], dtype=float)
    if np.any(hare <= 0) or np.any(lynx <= 0):
        raise ModelError("pelt counts must be positive for a log-normal observation model")
    return year, hare, lynx


class LotkaVolterraModel(ModelSpec):
    name = "lotka-volterra"
    data_kind = "pelts"
    param_names = PARAM_NAMES
    constraints = (POSITIVE,) * 8
    quantities = PARAM_NAMES + ("loglik",)

    def __init__(self, t0: float = DEFAULT_T0, n_years: int = N_YEARS, step: float = STEP, gradient: str = "sensitivity"):
        if gradient not in ("sensitivity", "fd"):
            raise ModelError("gradient must be 'sensitivity' or 'fd'")
        self.t0 = float(t0)
        self.n_years = int(n_years)
        self.step = float(step)
        self.gradient = gradient

    @property
    def log_scales(self) -> np.ndarray:
        return LOG_SCALES

    def describe(self) -> dict:
        return {"id": self.name, "t0": self.t0, "n_years": self.n_years, "step": self.step, "gradient": self.gradient}

    def empty_data(self) -> Dataset:
        return Dataset.empty_like("pelts", {"t0": self.t0})

    def prior_sample(self, rng: np.random.Generator) -> ParamVec:
        rates = []
        for m, s in zip(RATE_MEAN, RATE_SD):
            v = -1.0
            while v <= 0:
                v = m + s * rng.standard_normal()
            rates.append(v)
        sig = np.exp(LOG_SIGMA_MEAN + rng.standard_normal(2))
        init = np.exp(LOG_INIT_MEAN + rng.standard_normal(2))
        return self.param_vec(np.concatenate([rates, sig, init]))

    def _plan(self, year: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sorted unique RK4 step counts and the index of each observation into them."""
        rel = year - self.t0
        uniq, inverse = np.unique(rel, return_inverse=True)
        steps = grid_steps(uniq, self.step, t0=0.0)
        return steps, inverse.astype(np.int64)

    def solve(self, params, years) -> np.ndarray:
        """States (H, L) at the given calendar years; raises IntegrationError on failure."""
        p = self.values(params)
        years = np.asarray(years, dtype=float)
        steps, inverse = self._plan(years)
        states, ok = _lv_solve(p[0], p[1], p[2], p[3], p[6], p[7], steps, self.step)
        if not ok:
            raise IntegrationError("Lotka-Volterra integration failed", float("nan"))
        return states[inverse]

    def simulate(self, params, rng: np.random.Generator, years=None) -> Dataset:
        p = self.values(params)
        if not np.all(np.isfinite(p)):
            raise ModelError("non-finite parameters")
        years = self.t0 + np.arange(self.n_years, dtype=float) if years is None else np.asarray(years, float)
        states = self.solve(p, years)
        eps = rng.standard_normal((len(years), 2))
        hare = np.exp(np.log(states[:, 0]) + p[4] * eps[:, 0])
        lynx = np.exp(np.log(states[:, 1]) + p[5] * eps[:, 1])
        return Dataset("pelts", {"year": years, "hare_pelts": hare, "lynx_pelts": lynx}, {"t0": self.t0})

    def log_prior(self, params) -> float:
        p = self.values(params)
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            return -math.inf
        lp = 0.0
        for k, (m, s) in enumerate(zip(RATE_MEAN, RATE_SD)):
            z = (p[k] - m) / s
            lp += -0.5 * z * z - math.log(s) - LOG_SQRT_2PI - LOG_TRUNC[k]
        for k, m in ((4, LOG_SIGMA_MEAN), (5, LOG_SIGMA_MEAN), (6, LOG_INIT_MEAN), (7, LOG_INIT_MEAN)):
            lx = math.log(p[k])
            lp += -0.5 * (lx - m) ** 2 - LOG_SQRT_2PI - lx
        return float(lp)

    def _args(self, data: Dataset) -> tuple:
        year, hare, lynx = _pelt_columns(data)
        steps, inverse = self._plan(year)
        return (steps, inverse, np.log(hare), np.log(lynx), self.step, LOG_SCALES, LOG_TRUNC)

    def log_likelihood(self, params, data: Dataset) -> float:
        """Sum of normal log-densities of the log pelt counts.

        Integration failure yields ``-inf``.
        """
        self.check_data(data)
        p = self.values(params)
        if len(data) == 0:
            return 0.0
        args = self._args(data)
        ssh, ssl = _lv_sq_resid(p, args)
        if ssh < 0:
            return -math.inf
        n = len(data)
        return float(
            -0.5 * ssh / p[4] ** 2 - n * (math.log(p[4]) + LOG_SQRT_2PI)
            - 0.5 * ssl / p[5] ** 2 - n * (math.log(p[5]) + LOG_SQRT_2PI)
        )

    def loglik_batch(self, draws: np.ndarray, data: Dataset) -> np.ndarray:
        self.check_data(data)
        draws = np.atleast_2d(draws)
        if len(data) == 0:
            return np.zeros(len(draws))
        args = self._args(data)
        n = len(data)
        out = np.empty(len(draws))
        for r, p in enumerate(draws):
            ssh, ssl = _lv_sq_resid(p, args)
            if ssh < 0:
                out[r] = -math.inf
                continue
            out[r] = (
                -0.5 * ssh / p[4] ** 2 - n * (math.log(p[4]) + LOG_SQRT_2PI)
                - 0.5 * ssl / p[5] ** 2 - n * (math.log(p[5]) + LOG_SQRT_2PI)
            )
        return out

    def target(self, data: Dataset) -> Target:
        self.check_data(data)
        if len(data) == 0:
            args = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0), self.step, LOG_SCALES, LOG_TRUNC)
        else:
            args = self._args(data)
        fn = _lv_logp_grad if self.gradient == "sensitivity" else _lv_logp_grad_fd
        return Target(self.dim, fn, args, self.param_names)
