"""Synthetic crowd scenes, ground-truth construction and batch assembly.

Ground truth follows the usual counting convention: every annotated head
centre contributes a unit-mass Gaussian kernel to the density map, and the
binary crowd mask is the support of that map.  Kernels are truncated to a
disk of radius four standard deviations and renormalized per point, so the
density map sums to the annotated count exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import imgio
from .errors import ConfigurationError, InputError
from .seeding import derive_rng

TRUNCATION_SIGMAS = 4.0


@dataclass(frozen=True)
class Scene:
    """An image with its head-centre annotations.

    Fields:
        image:  (H, W) float64 intensities in [0, 1]
        points: (N, 2) float64 rows/cols of head centres, inside the image
        id:     opaque identifier used in file names and reports
    """

    image: np.ndarray
    points: np.ndarray
    id: str = "scene"

    def __post_init__(self) -> None:
        image = np.asarray(self.image, dtype=np.float64)
        if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
            raise InputError(f"scene image must be 2-d and non-empty, got {image.shape}")
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        h, w = image.shape
        if points.size and (
            points[:, 0].min() < 0
            or points[:, 1].min() < 0
            or points[:, 0].max() >= h
            or points[:, 1].max() >= w
        ):
            raise InputError(f"scene {self.id!r}: head point outside {h}x{w} bounds")
        image.flags.writeable = False
        points.flags.writeable = False
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "points", points)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


def _value_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Smooth random field in [0, 1]: coarse grid, bilinear interpolation."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw))
    rows = np.arange(h) / cell
    cols = np.arange(w) / cell
    r0 = rows.astype(int)
    c0 = cols.astype(int)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c0 + 1] * fc
    bottom = grid[r0 + 1][:, c0] * (1 - fc) + grid[r0 + 1][:, c0 + 1] * fc
    return top * (1 - fr) + bottom * fr


def _add_blob(image: np.ndarray, row: float, col: float, amplitude: float, spread: float) -> None:
    h, w = image.shape
    radius = int(math.ceil(3.0 * spread))
    top, bottom = max(0, int(row) - radius), min(h, int(row) + radius + 1)
    left, right = max(0, int(col) - radius), min(w, int(col) + radius + 1)
    ys = np.arange(top, bottom, dtype=np.float64)[:, None]
    xs = np.arange(left, right, dtype=np.float64)[None, :]
    bump = amplitude * np.exp(-((ys - row) ** 2 + (xs - col) ** 2) / (2.0 * spread**2))
    image[top:bottom, left:right] += bump


def generate_synthetic_scene(
    seed: int,
    h: int,
    w: int,
    count_range: tuple[int, int],
    clutter_level: float,
    id: str | None = None,
) -> Scene:
    """Render a deterministic synthetic crowd scene.

    Each person is a small bright Gaussian blob.  Clutter adds smooth
    background texture plus dimmer distractor blobs whose intensity overlaps
    the faintest true heads, so counting stays genuinely ambiguous in
    cluttered scenes.  Realism is a non-goal; controllable difficulty is.

    Args:
        seed: generator seed; equal seeds give bit-identical scenes.
        h, w: image size in pixels, at least 32 each.
        count_range: inclusive (min, max) number of people.
        clutter_level: 0 gives a flat background, 1 the busiest texture.
    """
    if h < 32 or w < 32:
        raise ConfigurationError(f"scene size must be at least 32x32, got {h}x{w}")
    lo, hi = count_range
    if lo < 0 or hi < lo:
        raise ConfigurationError(f"invalid count range {count_range}")
    if not 0.0 <= clutter_level <= 1.0:
        raise ConfigurationError(f"clutter_level must lie in [0, 1], got {clutter_level}")

    rng = np.random.default_rng(seed)
    count = int(rng.integers(lo, hi + 1))

    # Scene-level style draws widen the family: blob size, brightness range
    # and texture all vary between scenes, not only within them.
    base_level = rng.uniform(0.06, 0.20)
    spread_scale = rng.uniform(0.8, 1.5)
    amp_lo = rng.uniform(0.42, 0.60)
    amp_hi = amp_lo + rng.uniform(0.25, 0.42)
    texture_gain = rng.uniform(0.7, 1.3) * clutter_level

    image = np.full((h, w), base_level, dtype=np.float64)
    if clutter_level > 0:
        image += 0.30 * texture_gain * _value_noise(rng, h, w, cell=max(8, min(h, w) // 5))
        image += 0.18 * texture_gain * _value_noise(rng, h, w, cell=5)

    margin = 2
    points = np.empty((count, 2), dtype=np.float64)
    if count:
        points[:, 0] = rng.integers(margin, h - margin, size=count)
        points[:, 1] = rng.integers(margin, w - margin, size=count)
    for row, col in points:
        _add_blob(
            image, row, col,
            amplitude=rng.uniform(amp_lo, amp_hi),
            spread=spread_scale * rng.uniform(1.3, 2.1),
        )

    # Distractor blobs: at high clutter their intensity overlaps the dimmest
    # true heads, so counting stays ambiguous rather than a threshold read.
    n_distractors = int(round(clutter_level * rng.uniform(0.5, 1.5) * (4 + 0.8 * count)))
    for _ in range(n_distractors):
        _add_blob(
            image,
            rng.uniform(0, h - 1),
            rng.uniform(0, w - 1),
            amplitude=rng.uniform(0.15, amp_lo + 0.1 * clutter_level),
            spread=spread_scale * rng.uniform(1.0, 2.6),
        )

    # Global illumination jitter, then clamp to the valid intensity range.
    contrast = rng.uniform(0.8, 1.2)
    brightness = rng.uniform(-0.08, 0.08)
    image = np.clip(0.5 + contrast * (image - 0.5) + brightness, 0.0, 1.0)

    return Scene(image=image, points=points, id=id or f"scene_{seed:08d}")


def density_from_points(scene: Scene, sigma: float = 4.0) -> np.ndarray:
    """Rasterize head points into a density map of unit-mass Gaussian kernels.

    Each kernel is truncated to the disk of radius 4*sigma, clipped at the
    image border, and renormalized to mass 1, so the map total equals the
    number of points up to float rounding.
    """
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    h, w = scene.image.shape
    density = np.zeros((h, w), dtype=np.float64)
    radius = TRUNCATION_SIGMAS * sigma
    reach = int(math.ceil(radius))
    for row, col in scene.points:
        if not (0 <= row < h and 0 <= col < w):
            raise InputError(f"point ({row}, {col}) outside {h}x{w} image")
        top, bottom = max(0, int(row) - reach), min(h, int(row) + reach + 1)
        left, right = max(0, int(col) - reach), min(w, int(col) + reach + 1)
        ys = np.arange(top, bottom, dtype=np.float64)[:, None]
        xs = np.arange(left, right, dtype=np.float64)[None, :]
        sq_dist = (ys - row) ** 2 + (xs - col) ** 2
        kernel = np.exp(-sq_dist / (2.0 * sigma**2))
        kernel[sq_dist > radius**2] = 0.0
        density[top:bottom, left:right] += kernel / kernel.sum()
    return density


def mask_from_density(density: np.ndarray) -> np.ndarray:
    """Binary crowd mask: 1 wherever the density map is strictly positive."""
    arr = np.asarray(density)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-d density map, got shape {arr.shape}")
    return (arr > 0).astype(np.uint8)


def pool_density(density: np.ndarray, stride: int) -> np.ndarray:
    """Downsample a density map to head resolution by block sum.

    Mass-preserving: each coarse cell holds the people mass of its
    stride x stride block, so the pooled total equals the original total.
    """
    return _block_reduce(density, stride, "sum")


def pool_mask(mask: np.ndarray, stride: int) -> np.ndarray:
    """Downsample a binary mask to head resolution by block max."""
    return _block_reduce(np.asarray(mask, dtype=np.float64), stride, "max")


def _block_reduce(values: np.ndarray, stride: int, how: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    h, w = arr.shape[-2], arr.shape[-1]
    if stride < 1 or h % stride or w % stride:
        raise InputError(f"grid {h}x{w} not divisible by stride {stride}")
    shaped = arr.reshape(arr.shape[:-2] + (h // stride, stride, w // stride, stride))
    if how == "sum":
        return shaped.sum(axis=(-3, -1))
    return shaped.max(axis=(-3, -1))


@dataclass(frozen=True)
class Batch:
    """One training batch of jointly augmented patches."""

    labeled_images: np.ndarray    # (L, patch, patch)
    labeled_density: np.ndarray   # (L, patch, patch)
    labeled_masks: np.ndarray     # (L, patch, patch) over {0, 1}
    unlabeled_images: np.ndarray  # (U, patch, patch)
    patch_size: int

    def __post_init__(self) -> None:
        p = self.patch_size
        for name in ("labeled_images", "labeled_density", "labeled_masks", "unlabeled_images"):
            arr = getattr(self, name)
            if arr.ndim != 3 or arr.shape[1:] != (p, p):
                raise InputError(f"{name} must have shape (n, {p}, {p}), got {arr.shape}")


def crop_flip(
    arrays: Sequence[np.ndarray], top: int, left: int, patch: int, flip: bool
) -> list[np.ndarray]:
    """Crop every array at one shared offset, optionally reversing columns.

    Values are moved, never blended: a plain slice plus an optional column
    reversal, so pixel mass is preserved exactly.
    """
    out = []
    for arr in arrays:
        view = arr[top : top + patch, left : left + patch]
        out.append(view[:, ::-1].copy() if flip else view.copy())
    return out


def make_batch(
    labeled_pool: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    unlabeled_pool: Sequence[np.ndarray],
    rng: np.random.Generator,
    patch: int,
    flip_p: float = 0.3,
    n_labeled: int = 8,
    n_unlabeled: int = 8,
) -> Batch:
    """Assemble a mixed batch of randomly cropped, jointly flipped patches.

    Labeled pool entries are (image, density, mask) triples; image, density
    and mask are cropped at the same offset and flipped together.  Density
    patches are not renormalized: a crop may cut kernels, and the partial
    mass inside the patch is the correct regression target for it.
    """
    if n_labeled > 0 and not len(labeled_pool):
        raise InputError("labeled pool is empty")
    if n_unlabeled > 0 and not len(unlabeled_pool):
        raise InputError("unlabeled pool is empty")

    def draw_patch(arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
        h, w = arrays[0].shape
        if h < patch or w < patch:
            raise InputError(f"source image {h}x{w} smaller than patch {patch}")
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        flip = bool(rng.random() < flip_p)
        return crop_flip(arrays, top, left, patch, flip)

    images, densities, masks = [], [], []
    for _ in range(n_labeled):
        idx = int(rng.integers(0, len(labeled_pool)))
        img, den, msk = draw_patch(labeled_pool[idx])
        images.append(img)
        densities.append(den)
        masks.append(msk)
    unlabeled = []
    for _ in range(n_unlabeled):
        idx = int(rng.integers(0, len(unlabeled_pool)))
        unlabeled.append(draw_patch([unlabeled_pool[idx]])[0])

    empty = np.empty((0, patch, patch), dtype=np.float64)
    return Batch(
        labeled_images=np.stack(images) if images else empty,
        labeled_density=np.stack(densities) if densities else empty,
        labeled_masks=np.stack(masks) if masks else empty,
        unlabeled_images=np.stack(unlabeled) if unlabeled else empty,
        patch_size=patch,
    )


# ---------------------------------------------------------------------------
# On-disk formats: PNG images, `row col` annotation sidecars, plain-text
# manifest with labeled / unlabeled / val sub-lists.
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"
_SPLITS = ("labeled", "unlabeled", "val")


@dataclass
class DatasetSplits:
    labeled: list[Scene]
    unlabeled: list[Scene]
    val: list[Scene]

    @property
    def all_scenes(self) -> list[Scene]:
        return self.labeled + self.unlabeled + self.val


def save_points(path: str | Path, points: np.ndarray) -> None:
    """Write annotations as one `row col` integer pair per line."""
    lines = [f"{int(round(r))} {int(round(c))}" for r, c in np.asarray(points).reshape(-1, 2)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_points(path: str | Path) -> np.ndarray:
    points = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected `row col`, got {line!r}")
        points.append((int(parts[0]), int(parts[1])))
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def save_scene(root: str | Path, scene: Scene) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    imgio.save_gray_png(root / "images" / f"{scene.id}.png", scene.image)
    save_points(root / "annotations" / f"{scene.id}.txt", scene.points)


def load_scene(root: str | Path, scene_id: str) -> Scene:
    root = Path(root)
    image_path = root / "images" / f"{scene_id}.png"
    ann_path = root / "annotations" / f"{scene_id}.txt"
    if not image_path.exists():
        raise InputError(f"missing image file {image_path}")
    if not ann_path.exists():
        raise InputError(f"missing annotation file {ann_path}")
    return Scene(image=imgio.load_gray_png(image_path), points=load_points(ann_path), id=scene_id)


def write_manifest(root: str | Path, split_ids: dict[str, list[str]]) -> None:
    lines = []
    for split in _SPLITS:
        for scene_id in split_ids.get(split, []):
            lines.append(f"{split} {scene_id}")
    (Path(root) / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(root: str | Path) -> dict[str, list[str]]:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise InputError(f"missing manifest {path}")
    split_ids: dict[str, list[str]] = {split: [] for split in _SPLITS}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in _SPLITS:
            raise InputError(f"{path}:{lineno}: expected `<split> <id>`, got {line!r}")
        split_ids[parts[0]].append(parts[1])
    return split_ids


def load_dataset(root: str | Path) -> DatasetSplits:
    split_ids = read_manifest(root)
    return DatasetSplits(
        labeled=[load_scene(root, sid) for sid in split_ids["labeled"]],
        unlabeled=[load_scene(root, sid) for sid in split_ids["unlabeled"]],
        val=[load_scene(root, sid) for sid in split_ids["val"]],
    )


def generate_dataset(
    out_dir: str | Path,
    n: int,
    seed: int,
    h: int = 64,
    w: int = 64,
    count_range: tuple[int, int] = (3, 18),
    clutter_level: float = 0.5,
    labeled_split: float = 0.5,
    val_fraction: float = 0.1,
) -> DatasetSplits:
    """Generate `n` scenes and write them with a labeled/unlabeled/val manifest.

    The validation pool takes floor(n * val_fraction) scenes (at least one),
    and the remainder is divided by `labeled_split` into labeled and
    unlabeled pools.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one scene, got n={n}")
    if not 0.0 <= labeled_split <= 1.0:
        raise ConfigurationError(f"labeled_split must lie in [0, 1], got {labeled_split}")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction must lie in [0, 1), got {val_fraction}")

    width = len(str(n - 1)) if n > 1 else 1
    scenes = []
    for i in range(n):
        scene_seed = int(derive_rng(seed, "scene", i).integers(0, 2**63 - 1))
        scenes.append(
            generate_synthetic_scene(
                scene_seed, h, w, count_range, clutter_level, id=f"scene_{i:0{width}d}"
            )
        )

    order = derive_rng(seed, "split").permutation(n)
    n_val = max(1, int(n * val_fraction)) if val_fraction > 0 else 0
    n_labeled = int((n - n_val) * labeled_split)
    val_ids = [scenes[i].id for i in order[:n_val]]
    labeled_ids = [scenes[i].id for i in order[n_val : n_val + n_labeled]]
    unlabeled_ids = [scenes[i].id for i in order[n_val + n_labeled :]]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        save_scene(out_dir, scene)
    write_manifest(
        out_dir, {"labeled": labeled_ids, "unlabeled": unlabeled_ids, "val": val_ids}
    )
    by_id = {scene.id: scene for scene in scenes}
    return DatasetSplits(
        labeled=[by_id[sid] for sid in labeled_ids],
        unlabeled=[by_id[sid] for sid in unlabeled_ids],
        val=[by_id[sid] for sid in val_ids],
    )
