"""MCMC convergence diagnostics: rank-normalized split R-hat, bulk ESS, thinning."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


class DiagnosticError(ValueError):
    """Diagnostic undefined for the given draws (too short, constant, non-finite)."""


def _as_chains(draws, index: int | None = None) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 3:
        if index is None:
            raise DiagnosticError("a quantity index is required for (chains, draws, dim) input")
        x = x[:, :, index]
    elif x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DiagnosticError(f"expected (chains, draws) array, got shape {x.shape}")
    if x.shape[1] < 4:
        raise DiagnosticError(f"need at least 4 draws per chain, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise DiagnosticError("draws contain non-finite values")
    if np.ptp(x) == 0:
        raise DiagnosticError("draws are constant; variance-based diagnostics are undefined")
    return x


def split_chains(x: np.ndarray) -> np.ndarray:
    """Halve every chain; with an odd length the middle draw is dropped."""
    n = x.shape[1]
    half = n // 2
    return np.vstack([x[:, :half], x[:, n - half:]])


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Pooled fractional ranks mapped to normal scores (Blom offsets)."""
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    chain_means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * chain_means.var(ddof=1) if m > 1 else 0.0
    if W == 0:
        raise DiagnosticError("zero within-chain variance")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def split_rhat(draws, index: int | None = None) -> float:
    """Rank-normalized split R-hat of one scalar quantity."""
    x = _as_chains(draws, index)
    return _rhat(rank_normalize(split_chains(x)))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, size, axis=-1)
    acov = np.fft.irfft(f * np.conjugate(f), size, axis=-1)[..., :n]
    return acov / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = np.zeros(n)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    # Geyer initial positive sequence
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # Geyer initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[:max_t + 1]) + np.sum(rho[max_t + 1:max_t + 2])
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(draws, index: int | None = None) -> float:
    """Rank-normalized bulk effective sample size of one scalar quantity."""
    x = _as_chains(draws, index)
    return _ess(rank_normalize(split_chains(x)))


def mcse_mean(draws, index: int | None = None) -> float:
    """Monte Carlo standard error of the mean, using bulk ESS."""
    x = _as_chains(draws, index)
    return float(x.std(ddof=1) / np.sqrt(ess_bulk(x)))


def thin(draws, target_count: int) -> np.ndarray:
    """Evenly strided subset of exactly ``target_count`` draws.

    The stride is ``floor(total / target_count)`` and the last draw of each
    stride block is kept.
    """
    x = np.asarray(draws)
    total = len(x)
    if target_count < 1:
        raise ValueError("target_count must be positive")
    if target_count > total:
        raise ValueError(f"cannot thin {total} draws to {target_count}")
    stride = total // target_count
    idx = stride * np.arange(1, target_count + 1) - 1
    return x[idx]


def summarize(chains: np.ndarray, indices) -> tuple[float, float]:
    """Max R-hat and min bulk ESS over quantity indices of a (chains, draws, dim) array.

    Quantities whose diagnostics are undefined (e.g. constant) are skipped.
    """
    rhats, esss = [], []
    for i in indices:
        try:
            rhats.append(split_rhat(chains, i))
            esss.append(ess_bulk(chains, i))
        except DiagnosticError:
            continue
    if not rhats:
        return float("nan"), float("nan")
    return float(max(rhats)), float(min(esss))
