"""Lossless image files and flat binary grid dumps."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

_GRID_HEADER = struct.Struct("<ii")          # rows, cols
_DENSITY_HEADER = struct.Struct("<iii")      # rows, cols, annotated count


def save_gray_png(path: str | Path, values: np.ndarray) -> None:
    """Write a [0, 1] intensity grid as an 8-bit grayscale PNG."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-d intensity grid, got shape {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path, format="PNG")


def load_gray_png(path: str | Path) -> np.ndarray:
    """Read a grayscale PNG back into a [0, 1] float grid."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def save_rgb_png(path: str | Path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InputError("expected an (H, W, 3) uint8 array")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_grid(path: str | Path, values: np.ndarray) -> None:
    """Dump a 2-d grid as float32 with a (rows, cols) int32 header."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-d grid, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_grid(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_GRID_HEADER.size)
        if len(header) != _GRID_HEADER.size:
            raise InputError(f"{path}: truncated grid header")
        rows, cols = _GRID_HEADER.unpack(header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise InputError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float32)


def write_density_grid(path: str | Path, density: np.ndarray, count: int) -> None:
    """Dump a density map as float32 with a (rows, cols, count) int32 header."""
    arr = np.asarray(density, dtype=np.float32)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-d density map, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_DENSITY_HEADER.pack(arr.shape[0], arr.shape[1], int(count)))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_density_grid(path: str | Path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        header = fh.read(_DENSITY_HEADER.size)
        if len(header) != _DENSITY_HEADER.size:
            raise InputError(f"{path}: truncated density header")
        rows, cols, count = _DENSITY_HEADER.unpack(header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise InputError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float32), count


# Piecewise-linear heat colormap anchors (position, r, g, b).
_HEAT_ANCHORS = np.array(
    [
        [0.00, 10, 10, 35],
        [0.25, 75, 20, 125],
        [0.50, 200, 55, 80],
        [0.75, 250, 150, 30],
        [1.00, 252, 252, 160],
    ],
    dtype=np.float64,
)


def colormap(values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Render a non-negative grid as an (H, W, 3) uint8 heat image.

    An all-zero grid renders uniformly as the colormap floor.
    """
    arr = np.asarray(values, dtype=np.float64)
    if vmax is None:
        vmax = float(arr.max())
    scale = vmax if vmax > 0 else 1.0
    x = np.clip(arr / scale, 0.0, 1.0)
    channels = [
        np.interp(x, _HEAT_ANCHORS[:, 0], _HEAT_ANCHORS[:, 1 + c]) for c in range(3)
    ]
    return np.rint(np.stack(channels, axis=-1)).astype(np.uint8)


def binary_colormap(
    mask: np.ndarray,
    zero_color: tuple[int, int, int] = (240, 210, 30),
    one_color: tuple[int, int, int] = (15, 15, 15),
) -> np.ndarray:
    """Render a {0, 1} map with exactly two colors (default: yellow / black)."""
    m = np.asarray(mask) > 0
    out = np.empty(m.shape + (3,), dtype=np.uint8)
    out[~m] = np.asarray(zero_color, dtype=np.uint8)
    out[m] = np.asarray(one_color, dtype=np.uint8)
    return out
