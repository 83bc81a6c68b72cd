"""The five loss terms of the training objective and their schedules.

Total objective (alpha trades the segmentation surrogate off against the
density main task; lambda is the Gaussian ramp-up weight on the unsupervised
consistency branch):

    total = sup_density + alpha * sup_seg + inherent
            + lambda * (alpha * cons_seg + cons_density)

Masked and weighted consistency terms are normalized by kept-pixel count or
weight mass, so their magnitude does not depend on how many pixels survive
the uncertainty gate.  Every loss has a companion `*_grad` returning the
value together with the exact gradient with respect to the student outputs;
teacher targets are constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError

_WEIGHT_MASS_FLOOR = 1e-8
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    seg_tradeoff: float = 0.1   # alpha: surrogate-task trade-off
    ramp_max: float = 1.0       # lambda ceiling after ramp-up
    ramp_steps: int = 1

    def __post_init__(self) -> None:
        if self.seg_tradeoff <= 0:
            raise ConfigurationError(f"seg_tradeoff must be positive, got {self.seg_tradeoff}")
        if self.ramp_steps <= 0:
            raise ConfigurationError(f"ramp_steps must be positive, got {self.ramp_steps}")


@dataclass
class LossReport:
    """Every component of one training step's objective."""

    sup_density: float = 0.0
    sup_seg: float = 0.0
    inherent: float = 0.0
    cons_seg: float = 0.0
    cons_density: float = 0.0
    total: float = 0.0
    ramp: float = 0.0
    seg_tradeoff: float = 0.0
    kept_fraction: float = 1.0

    def as_dict(self) -> dict[str, float]:
        return {
            "sup_density": self.sup_density,
            "sup_seg": self.sup_seg,
            "inherent": self.inherent,
            "cons_seg": self.cons_seg,
            "cons_density": self.cons_density,
            "total": self.total,
            "ramp": self.ramp,
            "seg_tradeoff": self.seg_tradeoff,
            "kept_fraction": self.kept_fraction,
        }


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise InputError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def supervised_density_grad(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all pixels of the labeled sub-batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(pred, target, "supervised density loss")
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / pred.size) * diff


def supervised_density_loss(pred: np.ndarray, target: np.ndarray) -> float:
    return supervised_density_grad(pred, target)[0]


def supervised_seg_grad(class_score: np.ndarray, mask: np.ndarray):
    """Categorical cross-entropy against the {0, 1} crowd mask."""
    score = np.asarray(class_score, dtype=np.float64)
    target = np.asarray(mask, dtype=np.float64)
    if score.ndim != target.ndim + 1 or score.shape[:-1] != target.shape or score.shape[-1] != 2:
        raise InputError(
            f"supervised seg loss: score {score.shape} does not match mask {target.shape}"
        )
    if target.size == 0:
        return 0.0, np.zeros_like(score)
    onehot = np.stack([1.0 - target, target], axis=-1)
    clamped = np.maximum(score, _LOG_FLOOR)
    n = target.size
    loss = float(-(onehot * np.log(clamped)).sum() / n)
    grad = -onehot / (clamped * n)
    return loss, grad


def supervised_seg_loss(class_score: np.ndarray, mask: np.ndarray) -> float:
    return supervised_seg_grad(class_score, mask)[0]


def inherent_consistency_grad(crowd_prob: np.ndarray, approx_seg: np.ndarray):
    """MSE tying the predicted crowd probability to the transformed density.

    Both maps belong to the student, so the gradient flows into both: the
    returned pair is (d/d crowd_prob, d/d approx_seg).
    """
    pb = np.asarray(crowd_prob, dtype=np.float64)
    ab = np.asarray(approx_seg, dtype=np.float64)
    _check_same_shape(pb, ab, "inherent consistency loss")
    if pb.size == 0:
        return 0.0, np.zeros_like(pb), np.zeros_like(ab)
    diff = pb - ab
    scale = 2.0 / pb.size
    return float(np.mean(diff * diff)), scale * diff, -scale * diff


def inherent_consistency_loss(crowd_prob: np.ndarray, approx_seg: np.ndarray) -> float:
    return inherent_consistency_grad(crowd_prob, approx_seg)[0]


def consistency_seg_grad(score_student: np.ndarray, score_teacher: np.ndarray, keep: np.ndarray):
    """Per-pixel squared distance between class scores, gated by a keep mask.

    The sum is normalized by the kept mass (floored at one pixel), so a
    fully uncertain image contributes zero.  The teacher score is a constant
    target; only the student gradient is returned.
    """
    ps = np.asarray(score_student, dtype=np.float64)
    pt = np.asarray(score_teacher, dtype=np.float64)
    gate = np.asarray(keep, dtype=np.float64)
    _check_same_shape(ps, pt, "segmentation consistency loss")
    if ps.shape[:-1] != gate.shape:
        raise InputError(f"keep mask {gate.shape} does not match scores {ps.shape}")
    if ps.size == 0:
        return 0.0, np.zeros_like(ps)
    diff = ps - pt
    denom = max(float(gate.sum()), 1.0)
    loss = float((gate[..., None] * diff * diff).sum() / denom)
    grad = (2.0 / denom) * gate[..., None] * diff
    return loss, grad


def consistency_seg_loss(score_student, score_teacher, keep) -> float:
    return consistency_seg_grad(score_student, score_teacher, keep)[0]


def consistency_density_grad(dens_student: np.ndarray, dens_teacher: np.ndarray, weights: np.ndarray):
    """Squared density disagreement, pixel-weighted and normalized by the
    weight mass (floored to avoid division by zero)."""
    ds = np.asarray(dens_student, dtype=np.float64)
    dt = np.asarray(dens_teacher, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    _check_same_shape(ds, dt, "density consistency loss")
    _check_same_shape(ds, w, "density consistency weights")
    if ds.size == 0:
        return 0.0, np.zeros_like(ds)
    diff = ds - dt
    denom = max(float(w.sum()), _WEIGHT_MASS_FLOOR)
    loss = float((w * diff * diff).sum() / denom)
    grad = (2.0 / denom) * w * diff
    return loss, grad


def consistency_density_loss(dens_student, dens_teacher, weights) -> float:
    return consistency_density_grad(dens_student, dens_teacher, weights)[0]


def ramp_lambda(step: int, weights: LossWeights) -> float:
    """Gaussian ramp-up: ramp_max * exp(-5 * (1 - t/T)^2), saturating at T."""
    if weights.ramp_steps <= 0:
        raise ConfigurationError(f"ramp_steps must be positive, got {weights.ramp_steps}")
    u = min(max(step, 0), weights.ramp_steps) / weights.ramp_steps
    return weights.ramp_max * math.exp(-5.0 * (1.0 - u) ** 2)


def total_loss(parts: dict[str, float], weights: LossWeights, ramp_value: float):
    """Combine the five parts into the training objective.

    `parts` carries sup_density, sup_seg, inherent, cons_seg, cons_density
    (missing terms default to zero).  Returns (total, LossReport).
    """
    sup_density = float(parts.get("sup_density", 0.0))
    sup_seg = float(parts.get("sup_seg", 0.0))
    inherent = float(parts.get("inherent", 0.0))
    cons_seg = float(parts.get("cons_seg", 0.0))
    cons_density = float(parts.get("cons_density", 0.0))
    alpha = weights.seg_tradeoff
    total = (
        sup_density
        + alpha * sup_seg
        + inherent
        + ramp_value * (alpha * cons_seg + cons_density)
    )
    report = LossReport(
        sup_density=sup_density,
        sup_seg=sup_seg,
        inherent=inherent,
        cons_seg=cons_seg,
        cons_density=cons_density,
        total=float(total),
        ramp=float(ramp_value),
        seg_tradeoff=float(alpha),
        kept_fraction=float(parts.get("kept_fraction", 1.0)),
    )
    return float(total), report
