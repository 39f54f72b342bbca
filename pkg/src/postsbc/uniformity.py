"""Graphical uniformity test for SBC ranks.

Ranks in ``{0, ..., S}`` are mapped to PIT values ``(rank + 1) / (S + 1)``
and their ECDF is compared with the uniform CDF on the grid
``u_k = k / K``, ``K = min(N, S + 1)``.  The simultaneous band is built from
pointwise binomial central intervals whose level ``gamma`` is calibrated by
Monte Carlo so that whole null trajectories stay inside with the requested
probability.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from scipy.stats import binom, chi2

from .rng import ROLE_BAND, substream

MC_REPLICATIONS = 5000
BISECTION_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class EcdfDiffCurve:
    grid: np.ndarray
    values: np.ndarray
    N: int
    S: int | None = None

    def __post_init__(self):
        if len(self.grid) != len(self.values):
            raise ValueError("grid and values differ in length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


@dataclass(frozen=True, eq=False)
class Envelope:
    N: int
    S: int
    coverage: float
    gamma: float
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mc_replications: int
    seed: int
    achieved: float = float("nan")  # coverage on the calibration sample

    def half_width_near(self, u: float) -> float:
        k = int(np.argmin(np.abs(self.grid - u)))
        return float(self.upper[k] - self.lower[k]) / 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("grid", "lower", "upper"):
            d[key] = [float(v) for v in d[key]]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Envelope":
        return cls(
            N=int(d["N"]),
            S=int(d["S"]),
            coverage=float(d["coverage"]),
            gamma=float(d["gamma"]),
            grid=np.asarray(d["grid"], dtype=float),
            lower=np.asarray(d["lower"], dtype=float),
            upper=np.asarray(d["upper"], dtype=float),
            mc_replications=int(d["mc_replications"]),
            seed=int(d["seed"]),
            achieved=float(d.get("achieved", float("nan"))),
        )


# -- curves ------------------------------------------------------------------


def grid_size(N: int, S: int) -> int:
    # a single rank carries S + 1 distinguishable outcomes; K = 1 would be vacuous
    return S + 1 if N == 1 else min(N, S + 1)


def _grid(N: int, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid u_k = k / K and the integer thresholds m_k with ECDF(u_k) = #(rank < m_k) / N."""
    K = grid_size(N, S)
    k = np.arange(1, K + 1)
    return k / K, (k * (S + 1)) // K


def _check_ranks(ranks, S: int) -> np.ndarray:
    r = np.asarray(ranks)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("need a non-empty 1-D list of ranks")
    if not np.issubdtype(r.dtype, np.integer):
        if not np.all(np.isfinite(r)) or np.any(r != np.round(r)):
            raise ValueError("ranks must be integers")
        r = r.astype(int)
    if r.min() < 0 or r.max() > S:
        raise ValueError(f"ranks must lie in [0, {S}]")
    return r


def pit_ecdf_diff(ranks, S: int) -> EcdfDiffCurve:
    """ECDF difference of the PIT values ``(rank + 1) / (S + 1)``."""
    r = _check_ranks(ranks, S)
    N = r.size
    grid, m = _grid(N, S)
    counts = np.searchsorted(np.sort(r), m, side="left")
    return EcdfDiffCurve(grid, counts / N - grid, N, S)


def ecdf_diff(pit_values, grid=None) -> EcdfDiffCurve:
    """ECDF difference of continuous PIT values in [0, 1]."""
    u = np.sort(np.asarray(pit_values, dtype=float))
    if u.size < 1 or np.any(u < 0) or np.any(u > 1) or not np.all(np.isfinite(u)):
        raise ValueError("PIT values must lie in [0, 1]")
    grid = np.linspace(0.0, 1.0, 101)[1:] if grid is None else np.asarray(grid, dtype=float)
    counts = np.searchsorted(u, grid, side="right")
    return EcdfDiffCurve(grid, counts / u.size - grid, u.size)


# -- simultaneous band -------------------------------------------------------


def _null_counts(N: int, S: int, m: np.ndarray, reps: int, seed: int) -> np.ndarray:
    rng = substream(seed, N, S, ROLE_BAND)
    cells = rng.multinomial(N, np.full(S + 1, 1.0 / (S + 1)), size=reps)
    cum = np.concatenate([np.zeros((reps, 1), dtype=np.int64), np.cumsum(cells, axis=1)], axis=1)
    return cum[:, m]


def _bounds(N: int, p: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    return binom.ppf(gamma / 2.0, N, p), binom.ppf(1.0 - gamma / 2.0, N, p)


def _coverage_fn(N: int, S: int, m: np.ndarray, reps: int, seed: int):
    p = m / (S + 1)
    if N == 1:
        # every trajectory is a single step at rank r: enumerate them exactly
        counts = (np.arange(S + 1)[:, None] < m[None, :]).astype(float)
        weights = np.full(S + 1, 1.0 / (S + 1))
    else:
        counts = _null_counts(N, S, m, reps, seed)
        weights = np.full(reps, 1.0 / reps)

    def coverage(gamma: float) -> float:
        lo, hi = _bounds(N, p, gamma)
        inside = np.all((counts >= lo) & (counts <= hi), axis=1)
        return float(weights @ inside)

    return coverage, p


@lru_cache(maxsize=256)
def _calibrate(N: int, S: int, coverage: float, reps: int, seed: int) -> tuple[float, float]:
    grid, m = _grid(N, S)
    cov, _ = _coverage_fn(N, S, m, reps, seed)
    # coverage(gamma) is non-increasing; bracket: lo keeps >= target, hi falls below
    lo, hi = 0.0, 1.0
    c_lo, c_hi = 1.0, cov(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        c = cov(mid)
        if abs(c - coverage) <= BISECTION_TOL:
            return mid, c
        if c >= coverage:
            lo, c_lo = mid, c
        else:
            hi, c_hi = mid, c
        if hi - lo < 1e-12:
            break
    # coverage is a step function; take the side closer to the target
    return (lo, c_lo) if abs(c_lo - coverage) <= abs(c_hi - coverage) else (hi, c_hi)


def simultaneous_band(
    N: int, S: int, coverage: float = 0.95, mc_replications: int = MC_REPLICATIONS, seed: int = 0
) -> Envelope:
    """Simultaneous band for the ECDF difference of ``N`` discrete-uniform ranks."""
    if N < 1 or S < 1:
        raise ValueError("N and S must be positive")
    if not 0.5 < coverage < 1.0:
        raise ValueError("coverage must lie in (0.5, 1)")
    gamma, achieved = _calibrate(int(N), int(S), float(coverage), int(mc_replications), int(seed))
    grid, m = _grid(N, S)
    lo, hi = _bounds(N, m / (S + 1), gamma)
    return Envelope(int(N), int(S), float(coverage), float(gamma), grid, lo / N - grid, hi / N - grid,
                    int(mc_replications), int(seed), float(achieved))


def null_coverage(envelope: Envelope, reps: int, seed: int) -> float:
    """Fraction of fresh null rank ensembles whose curve stays inside ``envelope``."""
    rng = np.random.Generator(np.random.Philox(seed))
    N, S = envelope.N, envelope.S
    _, m = _grid(N, S)
    cells = rng.multinomial(N, np.full(S + 1, 1.0 / (S + 1)), size=reps)
    cum = np.concatenate([np.zeros((reps, 1), dtype=np.int64), np.cumsum(cells, axis=1)], axis=1)
    values = cum[:, m] / N - envelope.grid
    inside = np.all((values >= envelope.lower - 1e-12) & (values <= envelope.upper + 1e-12), axis=1)
    return float(inside.mean())


def load_envelope(path: str | Path) -> Envelope:
    return Envelope.from_dict(json.loads(Path(path).read_text()))


# -- verdicts ----------------------------------------------------------------

GLOSSARY = {
    ("left", "down"): "inference tends to overestimate {q}",
    ("left", "up"): "inference tends to underestimate {q}",
    ("right", "down"): "the right tail of the posterior approximation for {q} tends to be thin",
    ("right", "up"): "the right tail of the posterior approximation for {q} tends to be heavy",
}


@dataclass(frozen=True)
class Excursion:
    start: float  # grid value where the run leaves the band
    end: float
    direction: str  # "up" or "down"
    region: str  # "left" when the run leaves the band before u = 0.5
    magnitude: float  # largest distance outside the band
    at: float

    def describe(self, quantity: str) -> str:
        meaning = GLOSSARY[(self.region, self.direction)].format(q=quantity)
        return f"{self.region}-region {'downward' if self.direction == 'down' else 'upward'} excursion: {meaning}"


@dataclass(frozen=True)
class Verdict:
    passed: bool
    excursions: tuple[Excursion, ...] = ()

    @property
    def label(self) -> str:
        return "PASS" if self.passed else "FAIL"

    @property
    def max_excursion(self) -> float:
        return max((e.magnitude for e in self.excursions), default=0.0)

    def primary(self) -> Excursion | None:
        return max(self.excursions, key=lambda e: e.magnitude, default=None)

    def to_dict(self, quantity: str | None = None) -> dict:
        out = {"verdict": self.label, "max_excursion": self.max_excursion, "excursions": []}
        for e in self.excursions:
            d = asdict(e)
            if quantity is not None:
                d["interpretation"] = e.describe(quantity)
            out["excursions"].append(d)
        return out


def band_check(curve: EcdfDiffCurve, envelope: Envelope) -> Verdict:
    """PASS when every curve value lies within [lower, upper]; strictly outside fails."""
    if len(curve.grid) != len(envelope.grid) or not np.allclose(curve.grid, envelope.grid, rtol=0, atol=1e-12):
        raise ValueError("curve and envelope grids differ")
    if curve.N != envelope.N or (curve.S is not None and curve.S != envelope.S):
        raise ValueError(f"curve (N={curve.N}, S={curve.S}) does not match envelope (N={envelope.N}, S={envelope.S})")
    v = curve.values
    above = v - envelope.upper
    below = envelope.lower - v
    side = np.where(above > 0, 1, np.where(below > 0, -1, 0))
    excursions = []
    k = 0
    n = len(v)
    while k < n:
        if side[k] == 0:
            k += 1
            continue
        s = side[k]
        j = k
        while j + 1 < n and side[j + 1] == s:
            j += 1
        dist = (above if s > 0 else below)[k:j + 1]
        peak = k + int(np.argmax(dist))
        excursions.append(
            Excursion(
                start=float(curve.grid[k]),
                end=float(curve.grid[j]),
                direction="up" if s > 0 else "down",
                region="left" if curve.grid[k] < 0.5 else "right",
                magnitude=float(dist.max()),
                at=float(curve.grid[peak]),
            )
        )
        k = j + 1
    return Verdict(not excursions, tuple(excursions))


def check_ranks(ranks, S: int, coverage: float = 0.95, seed: int = 0) -> tuple[Verdict, EcdfDiffCurve, Envelope]:
    curve = pit_ecdf_diff(ranks, S)
    env = simultaneous_band(curve.N, S, coverage, seed=seed)
    return band_check(curve, env), curve, env


# -- chi-square test ---------------------------------------------------------


def chi2_pit(ranks, S: int) -> np.ndarray:
    """Interior PIT mapping (rank + 0.5) / (S + 1) used by :func:`cook_chi2`."""
    r = _check_ranks(ranks, S)
    return (r + 0.5) / (S + 1)


def cook_chi2(pit_values) -> tuple[float, float]:
    """Sum of squared normal scores of the PIT values and its chi^2_N upper tail."""
    u = np.asarray(pit_values, dtype=float)
    if u.size < 1:
        raise ValueError("need at least one PIT value")
    if not np.all((u > 0) & (u < 1)):
        raise ValueError("PIT values must lie strictly inside (0, 1); map ranks with (rank + 0.5) / (S + 1)")
    stat = float(np.sum(ndtri(u) ** 2))
    return stat, float(chi2.sf(stat, u.size))
