"""Seeded generators for the bundled example datasets.

The CSV files under ``postsbc/data`` are exactly what these functions
produce; ``write_bundled`` regenerates them.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .models.base import Dataset
from .models.hierarchical import HierarchicalModel, generate_observed
from .models.io import read_dataset, write_dataset
from .models.lotka_volterra import LotkaVolterraModel
from .rng import ROLE_DATA, substream

DATA_SEED = 20240611

# (tau, sigma) at the 5th and 95th percentiles of the half-normal(0, 1) prior
REGIMES = {
    "hier_tau006_sigma196": (0.06, 1.96),
    "hier_tau196_sigma006": (1.96, 0.06),
}

# Generating values for the synthetic pelt series (rates per year, populations in thousands)
PELT_PARAMS = (0.55, 0.028, 0.80, 0.024, 0.25, 0.25, 33.0, 6.0)


def hierarchical_regime(tau: float, sigma: float, J: int = 50, I: int = 5, seed: int = DATA_SEED) -> Dataset:
    """Observed hierarchical data at fixed (tau, sigma) with mu0 = 0 and fresh group means."""
    model = HierarchicalModel(J=J, I=I, centered=False)
    data, _ = generate_observed(model, tau, sigma, substream(seed, 0, ROLE_DATA), mu0=0.0)
    return data


def synthetic_pelts(seed: int = DATA_SEED) -> Dataset:
    """21 years (1900-1920) of pelt counts simulated from the Lotka-Volterra model."""
    model = LotkaVolterraModel()
    return model.simulate(PELT_PARAMS, substream(seed, 1, ROLE_DATA))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("postsbc") / "data" / name))


def load_bundled(name: str) -> Dataset:
    return read_dataset(bundled_path(name if name.endswith(".csv") else name + ".csv"))


def write_bundled(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (tau, sigma) in REGIMES.items():
        path = directory / f"{name}.csv"
        write_dataset(hierarchical_regime(tau, sigma), path)
        written.append(path)
    path = directory / "synthetic_pelts.csv"
    write_dataset(synthetic_pelts(), path)
    written.append(path)
    return written
