"""Built-in generative models."""

from __future__ import annotations

from .base import Dataset, ModelError, ModelSpec, ParamVec
from .hierarchical import HierarchicalModel, generate_observed
from .lotka_volterra import LotkaVolterraModel, LvParams, lv_invariant, lv_rhs
from .normal import NormalModel, conjugate_posterior

MODEL_IDS = ("normal", "hierarchical-centered", "hierarchical-noncentered", "lotka-volterra")


def build_model(model_id: str, **params) -> ModelSpec:
    """Instantiate a built-in model by id."""
    if model_id == "normal":
        return NormalModel(**params)
    if model_id == "hierarchical-centered":
        return HierarchicalModel(centered=True, **params)
    if model_id == "hierarchical-noncentered":
        return HierarchicalModel(centered=False, **params)
    if model_id == "lotka-volterra":
        return LotkaVolterraModel(**params)
    raise ModelError(f"unknown model id {model_id!r}; choose from {', '.join(MODEL_IDS)}")


__all__ = [
    "Dataset",
    "HierarchicalModel",
    "LotkaVolterraModel",
    "LvParams",
    "MODEL_IDS",
    "ModelError",
    "ModelSpec",
    "NormalModel",
    "ParamVec",
    "build_model",
    "conjugate_posterior",
    "generate_observed",
    "lv_invariant",
    "lv_rhs",
]
