"""Teacher-student training loop.

Labeled patches feed only the student; unlabeled patches feed both models.
Each step runs, in order: the teacher's stochastic ensemble on the unlabeled
patches (targets plus uncertainty maps, no gradients), the student forward
pass under its own perturbations, the loss assembly, one optimizer step on
the student, and finally one EMA update of the teacher from the new student
parameters.  The teacher has no optimizer state; EMA is its only writer.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import Batch, DatasetSplits, density_from_points, make_batch, mask_from_density, pool_density, pool_mask
from .errors import ConfigurationError, InputError, NumericsError
from .losses import (
    LossReport,
    LossWeights,
    consistency_density_grad,
    consistency_seg_grad,
    inherent_consistency_grad,
    ramp_lambda,
    supervised_density_grad,
    supervised_seg_grad,
    total_loss,
)
from .model import (
    ModelOutput,
    NetworkConfig,
    PerturbationConfig,
    backward,
    clone_params,
    config_from_backbone,
    forward,
    init_params,
    save_checkpoint,
)
from .seeding import derive_rng
from .transform import TransformConfig, approx_segmentation, transform_gradient
from .uncertainty import ThresholdSchedule, estimate_uncertainty

MODES = ("semi", "label_only", "fully")
SEG_GATES = ("hard", "soft", "none")
DENSITY_GATES = ("soft", "hard", "none")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run; the file format is `key = value` lines."""

    epochs: int = 600
    lr: float = 7e-5
    lr_decay_every: int = 200       # divide the rate every this many epochs
    lr_decay_factor: float = 5.0
    labeled_batch: int = 8
    unlabeled_batch: int = 8
    mc_passes: int = 8              # stochastic teacher passes per step
    patch: int = 128
    flip_p: float = 0.3
    ema_decay: float = 0.999
    input_noise_std: float = 0.05
    dropout_rate: float = 0.5
    seg_tradeoff: float = 0.1       # alpha
    ramp_max: float = 1.0           # lambda ceiling
    ramp_epochs: float = 80.0       # lambda ramp length
    threshold_ramp_epochs: float = 80.0  # hard-mask threshold ramp length
    soft_weight: float = 7.0        # soft uncertainty mask ceiling
    transform_gain: float = 6000.0
    threshold_start: float = 0.75   # hard-mask threshold starts here (x max entropy)
    seg_gate: str = "hard"          # gate on the segmentation consistency term
    density_gate: str = "soft"      # weights on the density consistency term
    mode: str = "semi"
    backbone: str = "desk_small"
    gt_sigma: float = 4.0
    weight_decay: float = 0.0       # L2 pull on conv weights (biases exempt)
    seed: int = 0
    early_stop_patience: int = 50   # validation rounds without improvement; 0 disables
    val_every: int = 1

    def __post_init__(self) -> None:
        positive = (
            "epochs", "lr", "lr_decay_every", "lr_decay_factor", "labeled_batch",
            "patch", "gt_sigma", "ramp_max", "ramp_epochs", "soft_weight",
            "transform_gain", "seg_tradeoff", "val_every",
        )
        for name in positive + ("threshold_ramp_epochs",):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mc_passes < 1:
            raise ConfigurationError(f"mc_passes must be >= 1, got {self.mc_passes}")
        if self.unlabeled_batch < 0 or self.early_stop_patience < 0 or self.seed < 0:
            raise ConfigurationError("unlabeled_batch, early_stop_patience and seed must be >= 0")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigurationError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.flip_p <= 1.0:
            raise ConfigurationError(f"flip_p must lie in [0, 1], got {self.flip_p}")
        if self.input_noise_std < 0:
            raise ConfigurationError(f"input_noise_std must be >= 0, got {self.input_noise_std}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.seg_gate not in SEG_GATES:
            raise ConfigurationError(f"seg_gate must be one of {SEG_GATES}, got {self.seg_gate!r}")
        if self.density_gate not in DENSITY_GATES:
            raise ConfigurationError(
                f"density_gate must be one of {DENSITY_GATES}, got {self.density_gate!r}"
            )


def config_to_text(config: TrainConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def _parse_value(name: str, text: str):
    by_name = {f.name: f.type for f in fields(TrainConfig)}
    if name not in by_name:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = by_name[name]
    text = text.strip()
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    return text


def config_from_file(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    """Read a `key = value` config file; `overrides` wins over file values."""
    values: dict = {}
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing config file {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        values[key] = _parse_value(key, text)
    values.update(overrides or {})
    return TrainConfig(**values)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class TrainerState:
    config: TrainConfig
    net: NetworkConfig
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    adam: AdamState
    ramp_steps: int
    threshold_ramp_steps: int
    step: int = 0
    epoch: int = 0

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            seg_tradeoff=self.config.seg_tradeoff,
            ramp_max=self.config.ramp_max,
            ramp_steps=self.ramp_steps,
        )


def init_trainer(config: TrainConfig, steps_per_epoch: int = 1) -> TrainerState:
    """Fresh student, teacher as an exact copy, empty optimizer state."""
    net = config_from_backbone(config.backbone, config.dropout_rate)
    student = init_params(net, derive_rng(config.seed, "init"))
    teacher = clone_params(student)
    adam = AdamState(
        m={k: np.zeros_like(v) for k, v in student.items()},
        v={k: np.zeros_like(v) for k, v in student.items()},
    )
    ramp_steps = max(1, round(config.ramp_epochs * steps_per_epoch))
    threshold_ramp_steps = max(1, round(config.threshold_ramp_epochs * steps_per_epoch))
    return TrainerState(
        config=config, net=net, student=student, teacher=teacher, adam=adam,
        ramp_steps=ramp_steps, threshold_ramp_steps=threshold_ramp_steps,
    )


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Stepwise decay: lr / factor**(epoch // every)."""
    return config.lr / config.lr_decay_factor ** (epoch // config.lr_decay_every)


def ema_update(teacher: dict[str, np.ndarray], student: dict[str, np.ndarray], decay: float) -> None:
    """In-place exponential moving average: t = decay * t + (1 - decay) * s."""
    if teacher.keys() != student.keys():
        raise InputError("teacher and student parameter sets differ")
    for key, s in student.items():
        t = teacher[key]
        if t.shape != s.shape:
            raise InputError(f"shape mismatch for {key!r}: {t.shape} vs {s.shape}")
        teacher[key] = decay * t + (1.0 - decay) * s


def _adam_step(state: TrainerState, grads: dict[str, np.ndarray], lr: float) -> None:
    adam = state.adam
    decay = state.config.weight_decay
    adam.t += 1
    bias1 = 1.0 - ADAM_BETA1**adam.t
    bias2 = 1.0 - ADAM_BETA2**adam.t
    for key, g in grads.items():
        if decay and key.endswith(".w"):
            g = g + decay * state.student[key]
        adam.m[key] = ADAM_BETA1 * adam.m[key] + (1.0 - ADAM_BETA1) * g
        adam.v[key] = ADAM_BETA2 * adam.v[key] + (1.0 - ADAM_BETA2) * (g * g)
        step_dir = (adam.m[key] / bias1) / (np.sqrt(adam.v[key] / bias2) + ADAM_EPS)
        state.student[key] = state.student[key] - lr * step_dir


def compute_losses_and_grads(
    out: ModelOutput,
    n_labeled: int,
    density_target: np.ndarray,
    mask_target: np.ndarray,
    teacher_score: np.ndarray | None,
    teacher_density: np.ndarray | None,
    seg_gate_map: np.ndarray | None,
    density_weight_map: np.ndarray | None,
    config: TrainConfig,
    ramp_value: float,
    kept_fraction: float = 1.0,
):
    """Assemble all loss parts and the gradients on the student outputs.

    Returns (parts, d_class_score, d_density); the gradients already carry
    the trade-off and ramp coefficients of the combined objective.
    """
    semi = config.mode == "semi"
    alpha = config.seg_tradeoff
    d_score = np.zeros_like(out.class_score)
    d_density = np.zeros_like(out.density)
    parts: dict[str, float] = {"kept_fraction": kept_fraction}

    labeled = slice(0, n_labeled)
    unlabeled = slice(n_labeled, None)

    if n_labeled:
        value, grad = supervised_density_grad(out.density[labeled], density_target)
        parts["sup_density"] = value
        d_density[labeled] += grad
        value, grad = supervised_seg_grad(out.class_score[labeled], mask_target)
        parts["sup_seg"] = value
        d_score[labeled] += alpha * grad

    if semi:
        tcfg = TransformConfig(gain=config.transform_gain)
        approx = approx_segmentation(out.density, tcfg)
        value, g_prob, g_approx = inherent_consistency_grad(out.crowd_prob, approx)
        parts["inherent"] = value
        d_score[..., 1] += g_prob
        d_density += g_approx * transform_gradient(out.density, tcfg)

    if teacher_score is not None:
        value, grad = consistency_seg_grad(out.class_score[unlabeled], teacher_score, seg_gate_map)
        parts["cons_seg"] = value
        d_score[unlabeled] += ramp_value * alpha * grad
        value, grad = consistency_density_grad(
            out.density[unlabeled], teacher_density, density_weight_map
        )
        parts["cons_density"] = value
        d_density[unlabeled] += ramp_value * grad

    return parts, d_score, d_density


def train_step(state: TrainerState, batch: Batch) -> LossReport:
    """One optimization step; mutates the trainer state in place."""
    config = state.config
    net = state.net
    semi = config.mode == "semi"
    stride = net.output_stride
    n_labeled = batch.labeled_images.shape[0]

    density_target = pool_density(batch.labeled_density, stride)
    mask_target = pool_mask(batch.labeled_masks, stride)

    teacher_score = teacher_density = None
    seg_gate_map = density_weight_map = None
    kept_fraction = 1.0
    unlabeled = batch.unlabeled_images
    if semi and unlabeled.shape[0]:
        schedule = ThresholdSchedule(
            ramp_steps=state.threshold_ramp_steps, start_fraction=config.threshold_start
        )
        perturb = PerturbationConfig(
            input_noise_std=config.input_noise_std, dropout_active=True
        )
        bundle, teacher_density = estimate_uncertainty(
            state.teacher, net, unlabeled, config.mc_passes, perturb,
            derive_rng(config.seed, "teacher", state.step), schedule, state.step,
            config.soft_weight,
        )
        teacher_score = bundle.mean_score
        ones = np.ones_like(bundle.entropy)
        seg_gate_map = {"hard": bundle.hard, "soft": bundle.soft, "none": ones}[config.seg_gate]
        density_weight_map = {"soft": bundle.soft, "hard": bundle.hard, "none": ones}[
            config.density_gate
        ]
        kept_fraction = float(bundle.hard.mean())

    images = np.concatenate([batch.labeled_images, unlabeled], axis=0)
    student_perturb = PerturbationConfig(
        input_noise_std=config.input_noise_std,
        dropout_active=net.dropout_rate > 0,
    )
    out, cache = forward(
        state.student, net, images, perturb=student_perturb,
        rng=derive_rng(config.seed, "student", state.step), return_cache=True,
    )

    ramp_value = ramp_lambda(state.step, state.loss_weights) if semi else 0.0
    parts, d_score, d_density = compute_losses_and_grads(
        out, n_labeled, density_target, mask_target, teacher_score, teacher_density,
        seg_gate_map, density_weight_map, config, ramp_value, kept_fraction,
    )
    total, report = total_loss(parts, state.loss_weights, ramp_value)
    if not math.isfinite(total):
        raise NumericsError(
            f"non-finite loss at step {state.step}: "
            + ", ".join(f"{k}={v}" for k, v in parts.items())
        )

    grads = backward(state.student, net, cache, d_score, d_density)
    _adam_step(state, grads, lr_for_epoch(config, state.epoch))
    if semi:
        ema_update(state.teacher, state.student, config.ema_decay)
    state.step += 1
    return report


@dataclass
class FitResult:
    history: list[dict]
    best_val_mae: float
    best_val_rmse: float
    best_epoch: int
    best_student: dict[str, np.ndarray]
    best_teacher: dict[str, np.ndarray] | None
    state: TrainerState
    out_dir: Path | None = None


def _labeled_pool(scenes, sigma):
    pool = []
    for scene in scenes:
        density = density_from_points(scene, sigma)
        pool.append((scene.image, density, mask_from_density(density).astype(np.float64)))
    return pool


def fit(
    config: TrainConfig,
    dataset: DatasetSplits,
    out_dir: str | Path | None = None,
    mode: str | None = None,
) -> FitResult:
    """Train on a dataset split and track the best-validation student.

    `semi` runs the full pipeline.  `label_only` trains the student alone on
    the labeled pool (no teacher, no uncertainty, no transformation layer),
    and `fully` is label_only with the unlabeled pool folded into the
    labeled one.  Validation runs on the val split with deterministic
    inference, and the checkpoint with the best validation MAE is kept.
    """
    from .evaluation import evaluate  # local import to keep module load light

    if mode is not None:
        config = replace(config, mode=mode)
    labeled_scenes = list(dataset.labeled)
    if config.mode == "fully":
        labeled_scenes += list(dataset.unlabeled)
    if not labeled_scenes:
        raise ConfigurationError("the labeled pool is empty")
    semi = config.mode == "semi"
    unlabeled_images = [s.image for s in dataset.unlabeled] if semi else []

    labeled_pool = _labeled_pool(labeled_scenes, config.gt_sigma)
    steps_per_epoch = max(1, math.ceil(len(labeled_pool) / config.labeled_batch))
    state = init_trainer(config, steps_per_epoch)
    n_unlabeled = config.unlabeled_batch if (semi and unlabeled_images) else 0

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.txt").write_text(config_to_text(config), encoding="utf-8")
        metrics_fh = open(out_path / "metrics.jsonl", "w", encoding="utf-8")

    def emit(record: dict) -> None:
        history.append(record)
        if metrics_fh is not None:
            metrics_fh.write(json.dumps(record) + "\n")

    history: list[dict] = []
    best_mae = math.inf
    best_rmse = math.inf
    best_epoch = -1
    best_student = clone_params(state.student)
    best_teacher = clone_params(state.teacher) if semi else None
    rounds_since_best = 0

    try:
        for epoch in range(config.epochs):
            state.epoch = epoch
            lr = lr_for_epoch(config, epoch)
            for _ in range(steps_per_epoch):
                rng_batch = derive_rng(config.seed, "batch", state.step)
                batch = make_batch(
                    labeled_pool, unlabeled_images, rng_batch, config.patch,
                    flip_p=config.flip_p, n_labeled=config.labeled_batch,
                    n_unlabeled=n_unlabeled,
                )
                report = train_step(state, batch)
                record = {
                    "kind": "step",
                    "step": state.step - 1,
                    "epoch": epoch,
                    "lr": lr,
                    "sup_density": report.sup_density,
                    "sup_seg": report.sup_seg,
                }
                if semi:
                    record.update(
                        inherent=report.inherent,
                        cons_seg=report.cons_seg,
                        cons_density=report.cons_density,
                        ramp=report.ramp,
                        kept_fraction=report.kept_fraction,
                    )
                record["total"] = report.total
                emit(record)

            if (epoch + 1) % config.val_every == 0 or epoch == config.epochs - 1:
                if dataset.val:
                    result = evaluate(state.student, state.net, dataset.val)
                    val_mae, val_rmse = result.mae, result.rmse
                else:
                    val_mae = val_rmse = math.nan
                emit(
                    {
                        "kind": "val", "step": state.step, "epoch": epoch,
                        "val_mae": val_mae, "val_rmse": val_rmse,
                    }
                )
                if dataset.val and val_mae < best_mae:
                    best_mae, best_rmse, best_epoch = val_mae, val_rmse, epoch
                    best_student = clone_params(state.student)
                    best_teacher = clone_params(state.teacher) if semi else None
                    rounds_since_best = 0
                else:
                    rounds_since_best += 1
                    if config.early_stop_patience and rounds_since_best > config.early_stop_patience:
                        break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if not dataset.val:
        best_student = clone_params(state.student)
        best_teacher = clone_params(state.teacher) if semi else None

    if out_path is not None:
        meta = {"epoch": best_epoch, "val_mae": best_mae, "val_rmse": best_rmse,
                "mode": config.mode, "seed": config.seed}
        save_checkpoint(out_path / "best.ckpt", state.net, best_student, best_teacher, meta)
        save_checkpoint(
            out_path / "final.ckpt", state.net, state.student,
            state.teacher if semi else None,
            {"epoch": state.epoch, "mode": config.mode, "seed": config.seed},
        )

    return FitResult(
        history=history,
        best_val_mae=best_mae,
        best_val_rmse=best_rmse,
        best_epoch=best_epoch,
        best_student=best_student,
        best_teacher=best_teacher,
        state=state,
        out_dir=out_path,
    )
