"""Semi-supervised crowd counting with uncertainty-gated consistency training.

A plain-numpy library: synthetic scene generation and density ground truth,
a small conv net with exact manual backprop, Monte-Carlo dropout uncertainty
maps, a differentiable density-to-mask transformation layer, the five-term
training objective, a teacher-student loop with EMA updates, and counting
metrics.  Attribute access is lazy so importing the package stays cheap.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_API = {
    "data": [
        "Scene", "Batch", "DatasetSplits", "generate_synthetic_scene",
        "density_from_points", "mask_from_density", "make_batch", "crop_flip",
        "pool_density", "pool_mask", "generate_dataset", "load_dataset",
        "load_scene", "save_scene", "read_manifest", "write_manifest",
    ],
    "model": [
        "NetworkConfig", "PerturbationConfig", "ModelOutput", "forward",
        "backward", "init_params", "clone_params", "count_from_density",
        "desk_small", "vgg16_truncated", "tiny_config", "config_from_backbone",
        "save_checkpoint", "load_checkpoint", "Checkpoint",
    ],
    "uncertainty": [
        "ThresholdSchedule", "UncertaintyBundle", "mc_mean_score", "mc_ensemble",
        "shannon_entropy", "normalized_entropy", "hard_mask", "soft_mask",
        "estimate_uncertainty", "MAX_BINARY_ENTROPY",
    ],
    "transform": ["TransformConfig", "approx_segmentation", "transform_gradient"],
    "losses": [
        "LossWeights", "LossReport", "supervised_density_loss", "supervised_seg_loss",
        "inherent_consistency_loss", "consistency_seg_loss", "consistency_density_loss",
        "ramp_lambda", "total_loss",
    ],
    "trainer": [
        "TrainConfig", "TrainerState", "FitResult", "init_trainer", "train_step",
        "ema_update", "fit", "lr_for_epoch", "config_from_file", "config_to_text",
    ],
    "evaluation": [
        "EvalResult", "ImageResult", "evaluate", "export_maps", "infer_density",
        "predict_count", "boundary_entropy_gap", "boundary_band_split",
        "write_eval_result",
    ],
    "presets": ["desk_train_config", "build_desk_benchmark"],
    "errors": ["ConfigurationError", "InputError", "NumericsError"],
    "seeding": ["derive_rng"],
}

_HOME = {name: module for module, names in _API.items() for name in names}

__all__ = sorted(_HOME)


def __getattr__(name: str):
    module = _HOME.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value
