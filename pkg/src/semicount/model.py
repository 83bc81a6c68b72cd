"""Shared student/teacher network in plain numpy.

The network is a stack of 3x3 conv stages with ReLU, 2x2 max-pooling after
the early stages, and exactly two dropout sites in the feature extractor.
Two heads sit on the final features: a two-class softmax segmentation head
and a density head clamped at zero.  Forward passes cache enough to run an
exact manual backward pass, which keeps training free of any framework and
bit-reproducible.

Parameters live in a flat dict of float64 arrays:

    stage{i}.w (3, 3, Cin, Cout)   stage{i}.b (Cout,)
    seg.w      (3, 3, C, 2)        seg.b      (2,)
    density.w  (3, 3, C, 1)        density.b  (1,)
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigurationError, InputError

CHECKPOINT_FORMAT = "semicount.ckpt.v1"


@dataclass(frozen=True)
class PerturbationConfig:
    """Input-level Gaussian noise plus the dropout on/off switch."""

    input_noise_std: float = 0.0
    dropout_active: bool = False

    def __post_init__(self) -> None:
        if self.input_noise_std < 0:
            raise ConfigurationError(f"noise std must be >= 0, got {self.input_noise_std}")


@dataclass(frozen=True)
class NetworkConfig:
    backbone: str = "desk_small"
    channels: tuple[int, ...] = (16, 32, 32, 64)
    pool_after: tuple[int, ...] = (1, 2)
    dropout_after: tuple[int, ...] = (2, 3)
    dropout_rate: float = 0.5
    output_stride: int = 4
    # Trunk features are scaled by 1/width before the heads so the heads'
    # output moves at a width-independent rate under adaptive-moment steps;
    # without it the first optimizer swings overshoot the small density
    # targets and park the zero-clamped head in its dead region.
    head_input_scale: float | None = None

    def __post_init__(self) -> None:
        n = len(self.channels)
        if n == 0 or any(c < 1 for c in self.channels):
            raise ConfigurationError(f"invalid channel widths {self.channels}")
        if self.head_input_scale is None:
            object.__setattr__(self, "head_input_scale", 1.0 / self.channels[-1])
        if self.head_input_scale <= 0:
            raise ConfigurationError(f"head_input_scale must be positive, got {self.head_input_scale}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if len(set(self.dropout_after)) != 2:
            raise ConfigurationError("the feature extractor needs exactly two dropout sites")
        for site in self.dropout_after + self.pool_after:
            if not 1 <= site <= n:
                raise ConfigurationError(f"layer index {site} outside 1..{n}")
        if self.output_stride != 2 ** len(self.pool_after):
            raise ConfigurationError(
                f"output_stride {self.output_stride} inconsistent with "
                f"{len(self.pool_after)} pooling stages"
            )


def desk_small(dropout_rate: float = 0.5) -> NetworkConfig:
    """Small CPU-friendly default: four stages, stride-4 heads."""
    return NetworkConfig(dropout_rate=dropout_rate)


def vgg16_truncated(dropout_rate: float = 0.5) -> NetworkConfig:
    """Stand-in with the shape of the first ten VGG-16 conv layers, stride 8."""
    return NetworkConfig(
        backbone="vgg16_truncated",
        channels=(64, 64, 128, 128, 256, 256, 256, 512, 512, 512),
        pool_after=(2, 4, 7),
        dropout_after=(7, 10),
        dropout_rate=dropout_rate,
        output_stride=8,
    )


def tiny_config(channels: tuple[int, ...] = (3, 4), dropout_rate: float = 0.5) -> NetworkConfig:
    """Two-stage configuration small enough for finite-difference checks."""
    return NetworkConfig(
        backbone="tiny",
        channels=channels,
        pool_after=(1, 2),
        dropout_after=(1, 2),
        dropout_rate=dropout_rate,
        output_stride=4,
    )


def config_from_backbone(name: str, dropout_rate: float = 0.5) -> NetworkConfig:
    if name == "desk_small":
        return desk_small(dropout_rate)
    if name == "vgg16_truncated":
        return vgg16_truncated(dropout_rate)
    raise ConfigurationError(f"unknown backbone {name!r}")


@dataclass
class ModelOutput:
    """One forward pass: softmax class scores and the non-negative density."""

    class_score: np.ndarray  # (B, h, w, 2)
    density: np.ndarray      # (B, h, w)

    @property
    def crowd_prob(self) -> np.ndarray:
        """Crowd channel of the class score (channel 1), not a separate tensor."""
        return self.class_score[..., 1]


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He init for the trunk; near-zero heads.

    Head weights start at std 1e-3 so the segmentation logits begin neutral
    (scores near 0.5) and the density output begins at its +0.01 bias, just
    above the zero clamp.  A large-variance density head start lands far
    from the tiny per-pixel targets and the first optimizer steps would
    drive it into the clamp's dead region.
    """
    params: dict[str, np.ndarray] = {}
    cin = 1
    for i, cout in enumerate(cfg.channels, start=1):
        params[f"stage{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), size=(3, 3, cin, cout))
        params[f"stage{i}.b"] = np.zeros(cout)
        cin = cout
    params["seg.w"] = rng.normal(0.0, 1e-3, size=(3, 3, cin, 2))
    params["seg.b"] = np.zeros(2)
    params["density.w"] = rng.normal(0.0, 1e-3, size=(3, 3, cin, 1))
    params["density.b"] = np.full(1, 0.01)
    return params


def param_shapes(params: dict[str, np.ndarray]) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in params.items()}


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# Layer primitives (channels-last)
# ---------------------------------------------------------------------------


def _im2col3(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, w, 9 * c))
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[..., k * c : (k + 1) * c] = xp[:, dy : dy + h, dx : dx + w, :]
            k += 1
    return cols


def _conv_forward(x, weights, bias):
    cols = _im2col3(x)
    cout = weights.shape[-1]
    y = cols.reshape(-1, cols.shape[-1]) @ weights.reshape(-1, cout) + bias
    return y.reshape(x.shape[:3] + (cout,)), cols


def _conv_backward(d_out, cols, weights):
    b, h, w, cout = d_out.shape
    cin = weights.shape[2]
    d_flat = d_out.reshape(-1, cout)
    d_weights = (cols.reshape(-1, 9 * cin).T @ d_flat).reshape(weights.shape)
    d_bias = d_flat.sum(axis=0)
    d_cols = (d_flat @ weights.reshape(-1, cout).T).reshape(b, h, w, 9 * cin)
    d_padded = np.zeros((b, h + 2, w + 2, cin))
    k = 0
    for dy in range(3):
        for dx in range(3):
            d_padded[:, dy : dy + h, dx : dx + w, :] += d_cols[..., k * cin : (k + 1) * cin]
            k += 1
    return d_padded[:, 1:-1, 1:-1, :], d_weights, d_bias


def _maxpool_forward(x):
    b, h, w, c = x.shape
    windows = (
        x.reshape(b, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, h // 2, w // 2, c, 4)
    )
    idx = windows.argmax(axis=-1)  # ties route to the first maximum
    pooled = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return pooled, (idx, x.shape)


def _maxpool_backward(d_out, pool_cache):
    idx, shape = pool_cache
    b, h, w, c = shape
    d_windows = np.zeros((b, h // 2, w // 2, c, 4))
    np.put_along_axis(d_windows, idx[..., None], d_out[..., None], axis=-1)
    return (
        d_windows.reshape(b, h // 2, w // 2, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, h, w, c)
    )


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Network forward / backward
# ---------------------------------------------------------------------------


def forward(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    images: np.ndarray,
    perturb: PerturbationConfig = PerturbationConfig(),
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Run the network over a batch of (B, H, W) patches.

    A single (H, W) patch is lifted to a batch of one.  With dropout off and
    zero input noise the pass is deterministic; otherwise a generator is
    required and dropout masks plus input noise are drawn fresh.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise InputError(f"expected (B, H, W) patches, got shape {x.shape}")
    h, w = x.shape[1], x.shape[2]
    s = cfg.output_stride
    if h % s or w % s:
        raise InputError(f"patch {h}x{w} not divisible by output stride {s}")
    stochastic = perturb.dropout_active or perturb.input_noise_std > 0
    if stochastic and rng is None:
        raise ConfigurationError("stochastic forward pass requires a random generator")

    if perturb.input_noise_std > 0:
        x = x + rng.normal(0.0, perturb.input_noise_std, size=x.shape)

    a = x[..., None]
    stages = []
    for i in range(1, len(cfg.channels) + 1):
        a, cols = _conv_forward(a, params[f"stage{i}.w"], params[f"stage{i}.b"])
        relu_mask = a > 0
        a = a * relu_mask
        pool_cache = None
        if i in cfg.pool_after:
            a, pool_cache = _maxpool_forward(a)
        drop_mask = None
        if i in cfg.dropout_after and perturb.dropout_active and cfg.dropout_rate > 0:
            drop_mask = (rng.random(a.shape) >= cfg.dropout_rate) / (1.0 - cfg.dropout_rate)
            a = a * drop_mask
        stages.append((cols, relu_mask, pool_cache, drop_mask))

    head_in = a * cfg.head_input_scale
    z, seg_cols = _conv_forward(head_in, params["seg.w"], params["seg.b"])
    class_score = _softmax(z)
    d_raw, density_cols = _conv_forward(head_in, params["density.w"], params["density.b"])
    d_raw = d_raw[..., 0]
    density = np.maximum(d_raw, 0.0)

    out = ModelOutput(class_score=class_score, density=density)
    if not return_cache:
        return out
    cache = {
        "stages": stages,
        "seg_cols": seg_cols,
        "density_cols": density_cols,
        "class_score": class_score,
        "density_pos": d_raw > 0,
    }
    return out, cache


def backward(
    params: dict[str, np.ndarray],
    cfg: NetworkConfig,
    cache: dict,
    d_class_score: np.ndarray,
    d_density: np.ndarray,
) -> dict[str, np.ndarray]:
    """Backpropagate loss gradients on the two head outputs to all parameters.

    d_class_score differentiates with respect to the softmax output (the
    softmax Jacobian is applied here), d_density with respect to the clamped
    density map.
    """
    score = cache["class_score"]
    dz = score * (d_class_score - (d_class_score * score).sum(axis=-1, keepdims=True))
    d_feat_seg, d_seg_w, d_seg_b = _conv_backward(dz, cache["seg_cols"], params["seg.w"])
    d_raw = (d_density * cache["density_pos"])[..., None]
    d_feat_den, d_den_w, d_den_b = _conv_backward(d_raw, cache["density_cols"], params["density.w"])

    grads = {
        "seg.w": d_seg_w,
        "seg.b": d_seg_b,
        "density.w": d_den_w,
        "density.b": d_den_b,
    }
    da = cfg.head_input_scale * (d_feat_seg + d_feat_den)
    for i in range(len(cfg.channels), 0, -1):
        cols, relu_mask, pool_cache, drop_mask = cache["stages"][i - 1]
        if drop_mask is not None:
            da = da * drop_mask
        if pool_cache is not None:
            da = _maxpool_backward(da, pool_cache)
        da = da * relu_mask
        da, d_w, d_b = _conv_backward(da, cols, params[f"stage{i}.w"])
        grads[f"stage{i}.w"] = d_w
        grads[f"stage{i}.b"] = d_b
    return grads


def count_from_density(density: np.ndarray) -> float:
    """Total count predicted by a density map.

    The density head regresses block-summed ground truth, so each stride-
    resolution cell already holds the people mass of its block and the plain
    sum is directly comparable with full-resolution annotated counts.
    """
    arr = np.asarray(density, dtype=np.float64)
    return float(arr.sum())


# ---------------------------------------------------------------------------
# Checkpoints: one zip archive with named arrays plus the serialized config.
# Entries carry a fixed timestamp so identical contents give identical bytes.
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: NetworkConfig
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray] | None
    meta: dict[str, Any]


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(
    path: str | Path,
    config: NetworkConfig,
    student: dict[str, np.ndarray],
    teacher: dict[str, np.ndarray] | None = None,
    meta: dict[str, Any] | None = None,
) -> None:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "meta": meta or {},
        "has_teacher": teacher is not None,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, sort_keys=True).encode())
        for name in sorted(student):
            _write_entry(zf, f"student/{name}.npy", _npy_bytes(student[name]))
        if teacher is not None:
            for name in sorted(teacher):
                _write_entry(zf, f"teacher/{name}.npy", _npy_bytes(teacher[name]))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing checkpoint file {path}")
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise InputError(f"{path}: not a checkpoint archive (no manifest)") from None
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise InputError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
        raw = manifest["config"]
        config = NetworkConfig(
            backbone=raw["backbone"],
            channels=tuple(raw["channels"]),
            pool_after=tuple(raw["pool_after"]),
            dropout_after=tuple(raw["dropout_after"]),
            dropout_rate=raw["dropout_rate"],
            output_stride=raw["output_stride"],
            head_input_scale=raw.get("head_input_scale"),
        )
        student: dict[str, np.ndarray] = {}
        teacher: dict[str, np.ndarray] = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arr = np.load(io.BytesIO(zf.read(name)))
                group, key = name.split("/", 1)
                key = key[: -len(".npy")]
                (student if group == "student" else teacher)[key] = arr
    return Checkpoint(
        config=config,
        student=student,
        teacher=teacher if manifest["has_teacher"] else None,
        meta=manifest["meta"],
    )
