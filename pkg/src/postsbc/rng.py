"""Counter-based random substreams.

Every random decision in a campaign is drawn from a Philox stream whose key
is derived from a path of integers ``(seed, iteration, role, ...)``.  Any
subset of iterations can therefore be executed on any worker, in any order,
and reproduce the same bits.
"""

from __future__ import annotations

import numpy as np

# Role codes used as the third path element.  Values are part of the on-disk
# reproducibility contract; do not renumber.
ROLE_THETA = 0
ROLE_SIMULATE = 1
ROLE_REFIT = 2
ROLE_RANK = 3
ROLE_BASE = 4
ROLE_DATA = 5
ROLE_BAND = 6

ROLE_NAMES = {
    ROLE_THETA: "theta",
    ROLE_SIMULATE: "simulate",
    ROLE_REFIT: "refit",
    ROLE_RANK: "rank",
    ROLE_BASE: "base",
    ROLE_DATA: "data",
    ROLE_BAND: "band",
}


def substream(*path: int) -> np.random.Generator:
    """Return an independent generator keyed by an integer path."""
    if not path:
        raise ValueError("substream path must be non-empty")
    ints = [int(p) for p in path]
    if any(p < 0 for p in ints):
        raise ValueError(f"substream path entries must be non-negative, got {ints}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(ints)))


def seed_path(*path: int) -> str:
    """Human-readable form of a substream path, e.g. ``"1/17/refit"``."""
    parts = [str(int(p)) for p in path]
    if len(path) >= 3 and int(path[2]) in ROLE_NAMES:
        parts[2] = ROLE_NAMES[int(path[2])]
    return "/".join(parts)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit integer usable as the root of further substreams."""
    return int(rng.integers(0, 2**63 - 1))
