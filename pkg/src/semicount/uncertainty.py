"""Spatial uncertainty of the teacher's segmentation on unlabeled inputs.

Uncertainty is the per-pixel Shannon entropy of the mean class score over
several stochastic forward passes (fresh dropout masks and fresh input noise
per pass).  Two maps are derived from it:

    hard mask  = 1 where entropy < threshold   (keep only confident pixels)
    soft mask  = weight * (1 - entropy / ln 2) (down-weight uncertain pixels)

Entropy is measured in nats; with two classes it never exceeds ln 2, and the
normalization divides by that analytic maximum so the soft mask is
comparable across images.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .model import ModelOutput, NetworkConfig, PerturbationConfig, forward

MAX_BINARY_ENTROPY = math.log(2.0)

# log argument floor realizing the 0 * log 0 = 0 convention without branches
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ThresholdSchedule:
    """Entropy threshold ramping from start_fraction * max up to max.

    The ramp reuses the Gaussian ramp-up family exp(-5 * (1 - t/T)^2),
    rescaled so the endpoints are met exactly: threshold(0) is exactly
    start_fraction * max_entropy and threshold(t >= ramp_steps) is exactly
    max_entropy.
    """

    ramp_steps: int
    start_fraction: float = 0.75
    max_entropy: float = MAX_BINARY_ENTROPY

    def __post_init__(self) -> None:
        if self.ramp_steps < 1:
            raise ConfigurationError(f"ramp_steps must be >= 1, got {self.ramp_steps}")
        if not 0.0 < self.start_fraction <= 1.0:
            raise ConfigurationError(
                f"start_fraction must lie in (0, 1], got {self.start_fraction}"
            )

    def threshold(self, step: int) -> float:
        u = min(max(step, 0), self.ramp_steps) / self.ramp_steps
        low = math.exp(-5.0)
        ramp = (math.exp(-5.0 * (1.0 - u) ** 2) - low) / (1.0 - low)
        return self.max_entropy * (self.start_fraction + (1.0 - self.start_fraction) * ramp)


@dataclass
class UncertaintyBundle:
    """All uncertainty products for one batch of unlabeled patches."""

    mean_score: np.ndarray  # (B, h, w, 2) average of the stochastic passes
    entropy: np.ndarray     # (B, h, w) in [0, ln 2]
    normalized: np.ndarray  # (B, h, w) in [0, 1]
    hard: np.ndarray        # (B, h, w) over {0, 1}
    soft: np.ndarray        # (B, h, w) in [0, weight]


def mc_mean_score(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    images: np.ndarray,
    passes: int,
    perturb: PerturbationConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mean class score over `passes` stochastic forward passes."""
    return mc_ensemble(params, cfg, images, passes, perturb, rng)[0]


def mc_ensemble(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    images: np.ndarray,
    passes: int,
    perturb: PerturbationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean class score and mean density over the same stochastic passes.

    Passes are accumulated in a fixed order so the reduction is reproducible.
    """
    if passes < 1:
        raise ConfigurationError(f"need at least one stochastic pass, got {passes}")
    score_sum = None
    density_sum = None
    for _ in range(passes):
        out: ModelOutput = forward(params, cfg, images, perturb=perturb, rng=rng)
        if score_sum is None:
            score_sum = out.class_score.copy()
            density_sum = out.density.copy()
        else:
            score_sum += out.class_score
            density_sum += out.density
    return score_sum / passes, density_sum / passes


def shannon_entropy(mean_score: np.ndarray) -> np.ndarray:
    """Per-pixel entropy -sum_c p_c ln p_c of a class-score grid.

    The input must lie on the probability simplex per pixel (channel sums
    within 1e-4 of one); zero probabilities contribute zero.
    """
    p = np.asarray(mean_score, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] < 2:
        raise InputError(f"expected class channels last, got shape {p.shape}")
    sums = p.sum(axis=-1)
    if p.size and np.abs(sums - 1.0).max() > 1e-4:
        raise InputError("class scores do not sum to one per pixel")
    return -(p * np.log(np.maximum(p, _LOG_FLOOR))).sum(axis=-1)


def normalized_entropy(entropy: np.ndarray, max_entropy: float = MAX_BINARY_ENTROPY) -> np.ndarray:
    return np.clip(np.asarray(entropy, dtype=np.float64), 0.0, max_entropy) / max_entropy


def hard_mask(entropy: np.ndarray, schedule: ThresholdSchedule, step: int) -> np.ndarray:
    """Keep-mask of confident pixels: 1 where entropy is strictly below the
    scheduled threshold."""
    thr = schedule.threshold(step)
    return (np.asarray(entropy, dtype=np.float64) < thr).astype(np.float64)


def soft_mask(entropy: np.ndarray, weight: float = 7.0) -> np.ndarray:
    """Confidence weights weight * (1 - entropy / ln 2) in [0, weight]."""
    if weight <= 0:
        raise ConfigurationError(f"soft-mask weight must be positive, got {weight}")
    return weight * (1.0 - normalized_entropy(entropy))


def estimate_uncertainty(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    images: np.ndarray,
    passes: int,
    perturb: PerturbationConfig,
    rng: np.random.Generator,
    schedule: ThresholdSchedule,
    step: int,
    weight: float = 7.0,
) -> tuple[UncertaintyBundle, np.ndarray]:
    """Run the stochastic ensemble and build every uncertainty product.

    Returns the bundle plus the ensemble-mean density, which the trainer
    uses as the density consistency target so targets and uncertainty come
    from the same ensemble.
    """
    mean_score, mean_density = mc_ensemble(params, cfg, images, passes, perturb, rng)
    entropy = shannon_entropy(mean_score)
    bundle = UncertaintyBundle(
        mean_score=mean_score,
        entropy=entropy,
        normalized=normalized_entropy(entropy),
        hard=hard_mask(entropy, schedule, step),
        soft=soft_mask(entropy, weight),
    )
    return bundle, mean_density
