"""Differentiable layer turning a density map into an approximate crowd mask.

The hard rule "mask = 1 where density > 0" is not differentiable, so the
layer uses a steep scaled sigmoid instead:

    approx_mask = 2 * sigmoid(gain * density) - 1

which equals tanh(gain * density / 2).  The tanh form is the numerically
stable evaluation: it saturates cleanly to 1.0 for large inputs instead of
overflowing, and is exact at 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class TransformConfig:
    """gain is fixed, not learned; large values sharpen the step."""

    gain: float = 6000.0

    def __post_init__(self) -> None:
        if self.gain <= 0:
            raise ConfigurationError(f"gain must be positive, got {self.gain}")


def approx_segmentation(density: np.ndarray, cfg: TransformConfig = TransformConfig()) -> np.ndarray:
    """Elementwise 2*sigmoid(gain*density) - 1 over a non-negative map."""
    arr = np.asarray(density, dtype=np.float64)
    if arr.size and arr.min() < 0:
        raise InputError("density input must be non-negative")
    return np.tanh(0.5 * cfg.gain * arr)


def transform_gradient(density: np.ndarray, cfg: TransformConfig = TransformConfig()) -> np.ndarray:
    """Elementwise derivative of approx_segmentation with respect to density."""
    arr = np.asarray(density, dtype=np.float64)
    if arr.size and arr.min() < 0:
        raise InputError("density input must be non-negative")
    t = np.tanh(0.5 * cfg.gain * arr)
    return 0.5 * cfg.gain * (1.0 - t * t)
