"""Deterministic random-stream derivation.

Every stochastic component draws from its own generator, derived from the
single experiment seed plus a role label and integer indices (step, worker,
scene index).  Streams are therefore independent of each other and stable
across runs, which is what makes single-threaded training bit-reproducible.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

# Stable role ids; never reorder, only append.
_ROLES = {
    "init": 0,
    "split": 1,
    "scene": 2,
    "batch": 3,
    "teacher": 4,
    "student": 5,
    "worker": 6,
    "export": 7,
    "oracle": 8,
}


def derive_rng(seed: int, role: str, *indices: int) -> np.random.Generator:
    """Return the generator owned by (seed, role, indices)."""
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    try:
        role_id = _ROLES[role]
    except KeyError:
        raise ConfigurationError(f"unknown rng role {role!r}") from None
    key = (role_id,) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
