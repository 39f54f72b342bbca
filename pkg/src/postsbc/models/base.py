"""Generative-model contract shared by every built-in model.

A model knows how to draw parameters from its prior, simulate a dataset,
evaluate log-densities in constrained coordinates and map between the
constrained and unconstrained parameter spaces.  Samplers only ever see the
unconstrained log density exposed through :meth:`ModelSpec.target`.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..sampler.target import Target

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

REAL = "real"
POSITIVE = "positive"


class ModelError(ValueError):
    """Invalid input handed to a model operation."""


@dataclass(frozen=True, eq=False)
class ParamVec:
    """Named parameter vector with constrained and unconstrained views."""

    names: tuple[str, ...]
    constrained: np.ndarray
    unconstrained: np.ndarray

    def __post_init__(self):
        if not (len(self.names) == len(self.constrained) == len(self.unconstrained)):
            raise ModelError("ParamVec views must have equal length")

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.constrained[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.constrained)}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered observation records plus shape metadata.

    ``kind`` selects the column layout:

    * ``"normal"``: ``index``, ``value``
    * ``"grouped"``: ``group``, ``index``, ``value`` (meta ``n_groups``, ``per_group``)
    * ``"pelts"``: ``year``, ``hare_pelts``, ``lynx_pelts`` (meta ``t0``)
    """

    kind: str
    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ModelError(f"dataset columns have unequal lengths {sorted(lengths)}")
        if self.kind == "grouped":
            n_groups = self.meta.get("n_groups")
            group = self.columns["group"]
            if n_groups is not None and len(group) and (group.min() < 0 or group.max() >= n_groups):
                raise ModelError("group labels inconsistent with n_groups")
            per_group = self.meta.get("per_group")
            if per_group is not None and n_groups is not None and len(group) != n_groups * per_group:
                raise ModelError(
                    f"{len(group)} observations inconsistent with {n_groups} groups x {per_group}"
                )

    def __len__(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def __getitem__(self, column: str) -> np.ndarray:
        return self.columns[column]

    def take(self, idx: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        meta = dict(self.meta)
        meta.pop("per_group", None)
        return Dataset(self.kind, {k: v[idx] for k, v in self.columns.items()}, meta)

    def head(self, n: int) -> "Dataset":
        return self.take(np.arange(min(int(n), len(self))))

    def head_fraction(self, fraction: float) -> "Dataset":
        """Leading ``fraction`` of the observations (rounded down, at least one)."""
        if not 0.0 < fraction <= 1.0:
            raise ModelError(f"fraction must be in (0, 1], got {fraction}")
        if fraction == 1.0:
            return self
        return self.head(max(1, int(math.floor(fraction * len(self)))))

    def concat(self, other: "Dataset") -> "Dataset":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        if self.kind != other.kind or set(self.columns) != set(other.columns):
            raise ModelError("cannot concatenate datasets of different layouts")
        meta = {**other.meta, **self.meta}
        meta.pop("per_group", None)
        if self.kind == "grouped":
            meta["n_groups"] = max(self.meta.get("n_groups", 0), other.meta.get("n_groups", 0))
        cols = {k: np.concatenate([self.columns[k], other.columns[k]]) for k in self.columns}
        return Dataset(self.kind, cols, meta)

    @staticmethod
    def empty_like(kind: str, meta: dict | None = None) -> "Dataset":
        cols = {
            "normal": ("index", "value"),
            "grouped": ("group", "index", "value"),
            "pelts": ("year", "hare_pelts", "lynx_pelts"),
        }[kind]
        dtype = {"group": int, "index": int}
        return Dataset(kind, {c: np.zeros(0, dtype=dtype.get(c, float)) for c in cols}, dict(meta or {}))


class ModelSpec(ABC):
    """Abstract generative model.

    Subclasses set ``name``, ``param_names``, ``constraints`` (``"real"`` or
    ``"positive"`` per parameter), ``log_scales`` (reference scale of the log
    transform for positive parameters) and ``quantities`` (default test
    quantities).
    """

    name: str = "model"
    data_kind: str = "normal"
    param_names: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()
    quantities: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.param_names)

    @property
    def log_scales(self) -> np.ndarray:
        return np.zeros(self.dim)

    # -- transforms -------------------------------------------------------

    def _positive_mask(self) -> np.ndarray:
        return np.array([c == POSITIVE for c in self.constraints], dtype=bool)

    def to_unconstrained(self, values: Iterable[float]) -> tuple[np.ndarray, float]:
        """Map constrained values to the sampler's space.

        Returns the unconstrained vector and the log-Jacobian of the inverse
        (to-constrained) map evaluated at that point.
        """
        x = np.array(values, dtype=float)
        if x.shape != (self.dim,):
            raise ModelError(f"{self.name}: expected {self.dim} values, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ModelError(f"{self.name}: non-finite parameter values")
        pos = self._positive_mask()
        if np.any(x[pos] <= 0):
            bad = [n for n, v, p in zip(self.param_names, x, pos) if p and v <= 0]
            raise ModelError(f"{self.name}: out-of-support values for {bad}")
        u = x.copy()
        u[pos] = np.log(x[pos]) - self.log_scales[pos]
        return u, float(np.sum(np.log(x[pos])))

    def to_constrained(self, values: Iterable[float]) -> tuple[np.ndarray, float]:
        """Inverse of :meth:`to_unconstrained`, with log |d constrained / d unconstrained|."""
        u = np.array(values, dtype=float)
        if u.shape[-1] != self.dim:
            raise ModelError(f"{self.name}: expected {self.dim} values, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ModelError(f"{self.name}: non-finite unconstrained values")
        pos = self._positive_mask()
        x = u.copy()
        logx = u[..., pos] + self.log_scales[pos]
        x[..., pos] = np.exp(logx)
        return x, np.sum(logx, axis=-1) if x.ndim > 1 else float(np.sum(logx))

    def transform(self, direction: str, values) -> tuple[np.ndarray, float]:
        if direction == "to-unconstrained":
            return self.to_unconstrained(values)
        if direction == "to-constrained":
            return self.to_constrained(values)
        raise ModelError(f"unknown transform direction {direction!r}")

    def param_vec(self, constrained: Iterable[float]) -> ParamVec:
        x = np.array(constrained, dtype=float)
        u, _ = self.to_unconstrained(x)
        return ParamVec(tuple(self.param_names), x, u)

    def param_vec_from_unconstrained(self, unconstrained: Iterable[float]) -> ParamVec:
        u = np.array(unconstrained, dtype=float)
        x, _ = self.to_constrained(u)
        return ParamVec(tuple(self.param_names), x, u)

    def values(self, params: ParamVec | Iterable[float]) -> np.ndarray:
        if isinstance(params, ParamVec):
            return params.constrained
        x = np.asarray(params, dtype=float)
        if x.shape != (self.dim,):
            raise ModelError(f"{self.name}: expected {self.dim} values, got shape {x.shape}")
        return x

    def in_support(self, x: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(x)) and np.all(x[self._positive_mask()] > 0))

    # -- model interface --------------------------------------------------

    @abstractmethod
    def prior_sample(self, rng: np.random.Generator) -> ParamVec: ...

    @abstractmethod
    def simulate(self, params: ParamVec | Iterable[float], rng: np.random.Generator) -> Dataset: ...

    @abstractmethod
    def log_prior(self, params: ParamVec | Iterable[float]) -> float: ...

    @abstractmethod
    def log_likelihood(self, params: ParamVec | Iterable[float], data: Dataset) -> float: ...

    @abstractmethod
    def target(self, data: Dataset) -> Target:
        """Unconstrained log posterior (with Jacobian) and its gradient."""

    def loglik_batch(self, draws: np.ndarray, data: Dataset) -> np.ndarray:
        """Joint log-likelihood for each row of a constrained draw matrix."""
        return np.array([self.log_likelihood(row, data) for row in np.atleast_2d(draws)])

    def quantity_values(self, quantity: str, draws: np.ndarray, data: Dataset) -> np.ndarray:
        """Values of a test quantity for each row of a constrained draw matrix."""
        draws = np.atleast_2d(draws)
        if quantity == "loglik":
            return self.loglik_batch(draws, data)
        if quantity in self.param_names:
            return draws[:, self.param_names.index(quantity)].copy()
        derived = self.derived_quantity(quantity, draws)
        if derived is None:
            raise ModelError(f"{self.name}: unknown test quantity {quantity!r}")
        return derived

    def derived_quantity(self, quantity: str, draws: np.ndarray) -> np.ndarray | None:
        return None

    def convert_from(self, source: "ModelSpec", values: np.ndarray) -> np.ndarray:
        """Re-express constrained draws of an equivalent ``source`` model in this model's parameters."""
        values = np.asarray(values, dtype=float)
        if tuple(source.param_names) != tuple(self.param_names):
            raise ModelError(f"cannot convert {source.name} parameters to {self.name}")
        return values

    def check_data(self, data: Dataset) -> None:
        if data.kind != self.data_kind:
            raise ModelError(f"{self.name} expects {self.data_kind!r} data, got {data.kind!r}")

    def empty_data(self) -> Dataset:
        return Dataset.empty_like(self.data_kind)

    def describe(self) -> dict:
        return {"id": self.name}


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI
