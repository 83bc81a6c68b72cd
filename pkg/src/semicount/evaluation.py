"""Counting metrics, deterministic inference and qualitative map exports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio
from .data import Scene, density_from_points, mask_from_density, pool_mask
from .errors import ConfigurationError
from .model import NetworkConfig, PerturbationConfig, count_from_density, forward
from .seeding import derive_rng
from .transform import TransformConfig, approx_segmentation
from .uncertainty import ThresholdSchedule, estimate_uncertainty, mc_mean_score, shannon_entropy


@dataclass
class ImageResult:
    scene_id: str
    predicted: float
    actual: float

    @property
    def abs_error(self) -> float:
        return abs(self.predicted - self.actual)


@dataclass
class EvalResult:
    per_image: list[ImageResult]
    mae: float
    rmse: float

    def to_table(self) -> str:
        lines = [f"{'scene':<16}{'predicted':>12}{'actual':>10}{'abs err':>10}"]
        for r in self.per_image:
            lines.append(f"{r.scene_id:<16}{r.predicted:>12.2f}{r.actual:>10.1f}{r.abs_error:>10.2f}")
        lines.append(f"MAE  = {self.mae:.4f}")
        lines.append(f"RMSE = {self.rmse:.4f}")
        return "\n".join(lines) + "\n"

    def to_records(self) -> list[dict]:
        records = [
            {
                "scene": r.scene_id,
                "predicted": r.predicted,
                "actual": r.actual,
                "abs_error": r.abs_error,
            }
            for r in self.per_image
        ]
        records.append({"mae": self.mae, "rmse": self.rmse})
        return records


def _infer_whole(params, cfg: NetworkConfig, image: np.ndarray) -> np.ndarray:
    """Deterministic stride-resolution density for one image.

    Images not divisible by the output stride are reflect-padded on the
    bottom/right edges; the returned grid covers ceil(dim / stride) cells.
    """
    h, w = image.shape
    s = cfg.output_stride
    pad_h = (-h) % s
    pad_w = (-w) % s
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w)), mode="reflect")
    out = forward(params, cfg, image[None], perturb=PerturbationConfig())
    return out.density[0]


def infer_density(
    params, cfg: NetworkConfig, image: np.ndarray, tile: int | None = None
) -> np.ndarray:
    """Full-image inference, or non-overlapping tiles when a tile size is set.

    Tiles never overlap, so per-tile counts stay additive.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    s = cfg.output_stride
    if tile is None or (h <= tile and w <= tile):
        return _infer_whole(params, cfg, img)
    if tile % s:
        raise ConfigurationError(f"tile size {tile} not divisible by output stride {s}")
    out = np.zeros((math.ceil(h / s), math.ceil(w / s)))
    for top in range(0, h, tile):
        for left in range(0, w, tile):
            grid = _infer_whole(params, cfg, img[top : top + tile, left : left + tile])
            r0, c0 = top // s, left // s
            out[r0 : r0 + grid.shape[0], c0 : c0 + grid.shape[1]] = grid
    return out


def predict_count(params, cfg: NetworkConfig, image: np.ndarray, tile: int | None = None) -> float:
    return count_from_density(infer_density(params, cfg, image, tile))


def evaluate(params, cfg: NetworkConfig, scenes: list[Scene], tile: int | None = None) -> EvalResult:
    """Counting metrics over scenes with deterministic inference.

    Dropout stays off and no input noise is added, so repeated calls on the
    same checkpoint return identical results.
    """
    per_image = []
    errors = []
    for scene in scenes:
        predicted = predict_count(params, cfg, scene.image, tile)
        actual = float(scene.count)
        per_image.append(ImageResult(scene_id=scene.id, predicted=predicted, actual=actual))
        errors.append(predicted - actual)
    errors_arr = np.asarray(errors, dtype=np.float64)
    mae = float(np.abs(errors_arr).mean()) if errors else 0.0
    rmse = float(np.sqrt((errors_arr**2).mean())) if errors else 0.0
    return EvalResult(per_image=per_image, mae=mae, rmse=rmse)


def write_eval_result(result: EvalResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "eval.txt"
    table.write_text(result.to_table(), encoding="utf-8")
    records = out / "eval.jsonl"
    with open(records, "w", encoding="utf-8") as fh:
        for record in result.to_records():
            fh.write(json.dumps(record) + "\n")
    return [table, records]


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation of a boolean grid by shifting and OR-ing."""
    out = mask.copy()
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.zeros_like(mask)
            ys = slice(max(0, dy), min(h, h + dy))
            xs = slice(max(0, dx), min(w, w + dx))
            ys_src = slice(max(0, -dy), min(h, h - dy))
            xs_src = slice(max(0, -dx), min(w, w - dx))
            shifted[ys, xs] = mask[ys_src, xs_src]
            out |= shifted
    return out


def boundary_band_split(mask: np.ndarray, band: int = 2):
    """Split a binary crowd mask into a boundary band and the interior.

    Boundary cells are mask cells with a 4-neighbour outside the mask (the
    image frame itself does not count as a boundary).  The band extends
    `band` cells to both sides of that interface; the interior is the mask
    minus the band.  Returns (band_mask, interior_mask) as boolean grids.
    """
    m = np.asarray(mask) > 0
    padded = np.pad(m, 1, mode="edge")
    neighbours_outside = (
        ~padded[:-2, 1:-1] | ~padded[2:, 1:-1] | ~padded[1:-1, :-2] | ~padded[1:-1, 2:]
    )
    interface = m & neighbours_outside
    band_mask = _dilate(interface, band)
    return band_mask, m & ~band_mask


def boundary_entropy_gap(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    scene: Scene,
    gt_sigma: float = 2.5,
    passes: int = 8,
    input_noise_std: float = 0.05,
    band: int = 2,
    seed: int = 0,
):
    """Mean segmentation entropy on the crowd-boundary band vs the interior.

    Entropy comes from stochastic passes of the given model on the whole
    scene.  Returns (band_mean, interior_mean), or None when the scene has
    no usable boundary or interior at head resolution.
    """
    density = density_from_points(scene, gt_sigma)
    mask = pool_mask(mask_from_density(density), cfg.output_stride)
    band_mask, interior = boundary_band_split(mask, band)
    if band_mask.sum() == 0 or interior.sum() == 0:
        return None
    h, w = scene.image.shape
    s = cfg.output_stride
    image = scene.image
    pad_h, pad_w = (-h) % s, (-w) % s
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w)), mode="reflect")
    mean_score = mc_mean_score(
        params, cfg, image[None], passes,
        PerturbationConfig(input_noise_std=input_noise_std, dropout_active=True),
        derive_rng(seed, "export", 1),
    )
    entropy = shannon_entropy(mean_score)[0][: mask.shape[0], : mask.shape[1]]
    return float(entropy[band_mask].mean()), float(entropy[interior].mean())


def export_maps(
    student: dict[str, np.ndarray],
    teacher: dict[str, np.ndarray] | None,
    cfg: NetworkConfig,
    scene: Scene,
    out_dir: str | Path,
    passes: int = 8,
    input_noise_std: float = 0.05,
    soft_weight: float = 7.0,
    transform_gain: float = 6000.0,
    gt_sigma: float = 4.0,
    threshold_step: int = 0,
    seed: int = 0,
) -> list[Path]:
    """Write color renderings plus raw float32 grids for one scene.

    Covers the qualitative panel set: input, ground-truth density, predicted
    density, crowd probability, transformed density, entropy, and the hard
    and soft uncertainty maps (teacher-based when a teacher is available,
    otherwise from the student's own stochastic passes).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def dump(name: str, rgb: np.ndarray, grid: np.ndarray | None) -> None:
        png = out / f"{name}.png"
        imgio.save_rgb_png(png, rgb)
        written.append(png)
        if grid is not None:
            raw = out / f"{name}.f32"
            imgio.write_grid(raw, grid)
            written.append(raw)

    gray = np.repeat(
        np.clip(np.rint(scene.image * 255.0), 0, 255).astype(np.uint8)[..., None], 3, axis=-1
    )
    input_png = out / "input.png"
    imgio.save_rgb_png(input_png, gray)
    written.append(input_png)

    gt_density = density_from_points(scene, gt_sigma)
    dump("gt_density", imgio.colormap(gt_density), gt_density)
    gt_mask = mask_from_density(gt_density)
    dump("gt_mask", imgio.binary_colormap(1 - gt_mask), gt_mask.astype(np.float64))

    h, w = scene.image.shape
    s = cfg.output_stride
    pad_h, pad_w = (-h) % s, (-w) % s
    image = scene.image
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w)), mode="reflect")

    out_det = forward(student, cfg, image[None], perturb=PerturbationConfig())
    density = out_det.density[0]
    crowd_prob = out_det.crowd_prob[0]
    approx = approx_segmentation(density, TransformConfig(gain=transform_gain))
    dump("pred_density", imgio.colormap(density), density)
    dump("seg_prob", imgio.colormap(crowd_prob, vmax=1.0), crowd_prob)
    dump("approx_seg", imgio.colormap(approx, vmax=1.0), approx)

    mc_params = teacher if teacher is not None else student
    schedule = ThresholdSchedule(ramp_steps=max(1, threshold_step) if threshold_step else 1)
    bundle, _ = estimate_uncertainty(
        mc_params, cfg, image[None],
        passes, PerturbationConfig(input_noise_std=input_noise_std, dropout_active=True),
        derive_rng(seed, "export"), schedule, threshold_step, soft_weight,
    )
    entropy = bundle.entropy[0]
    dump("entropy", imgio.colormap(entropy, vmax=float(np.log(2.0))), entropy)
    # 1 = certain (kept): rendered black; uncertain pixels rendered yellow
    dump("hard_mask", imgio.binary_colormap(bundle.hard[0]), bundle.hard[0])
    dump("soft_mask", imgio.colormap(bundle.soft[0], vmax=soft_weight), bundle.soft[0])
    return written
