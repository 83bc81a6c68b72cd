"""Scene generation, density/mask ground truth and batch assembly."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semicount.data import (
    Scene,
    crop_flip,
    density_from_points,
    generate_dataset,
    generate_synthetic_scene,
    load_dataset,
    load_points,
    load_scene,
    make_batch,
    mask_from_density,
    pool_density,
    pool_mask,
    read_manifest,
    save_points,
    save_scene,
)
from semicount.errors import ConfigurationError, InputError
from semicount.imgio import read_density_grid, write_density_grid


def density_oracle(scene: Scene, sigma: float) -> np.ndarray:
    """Naive per-point rasterization: full-grid kernel, disk cut, renormalize."""
    h, w = scene.image.shape
    out = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    for row, col in scene.points:
        sq = (ys - row) ** 2 + (xs - col) ** 2
        kernel = np.exp(-sq / (2 * sigma**2))
        kernel[sq > (4 * sigma) ** 2] = 0.0
        out += kernel / kernel.sum()
    return out


class TestSyntheticScenes:
    def test_empty_scene(self):
        scene = generate_synthetic_scene(0, 64, 64, (0, 0), 0.0)
        assert scene.count == 0
        assert scene.points.shape == (0, 2)
        # flat background: no crowd, no clutter texture
        assert scene.image.std() < 0.01

    def test_forced_count(self):
        scene = generate_synthetic_scene(1, 128, 128, (5, 5), 0.2)
        assert scene.count == 5
        h, w = scene.shape
        assert np.all((scene.points[:, 0] >= 0) & (scene.points[:, 0] < h))
        assert np.all((scene.points[:, 1] >= 0) & (scene.points[:, 1] < w))

    def test_determinism(self):
        a = generate_synthetic_scene(1, 64, 64, (3, 9), 0.5)
        b = generate_synthetic_scene(1, 64, 64, (3, 9), 0.5)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.points, b.points)

    def test_intensities_in_range(self):
        scene = generate_synthetic_scene(7, 64, 96, (10, 20), 1.0)
        assert scene.image.min() >= 0.0
        assert scene.image.max() <= 1.0

    def test_invalid_dimensions(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_scene(0, 16, 64, (1, 2), 0.0)

    def test_empty_count_range(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_scene(0, 64, 64, (5, 2), 0.0)

    def test_point_outside_bounds_rejected(self):
        with pytest.raises(InputError):
            Scene(image=np.zeros((8, 8)), points=np.array([[8.0, 3.0]]))


class TestDensityFromPoints:
    def test_zero_points_zero_map(self):
        scene = generate_synthetic_scene(0, 64, 64, (0, 0), 0.0)
        density = density_from_points(scene, 4.0)
        assert density.shape == (64, 64)
        assert density.sum() == 0.0

    def test_single_centre_point_unit_mass(self):
        scene = Scene(image=np.zeros((64, 64)), points=np.array([[32.0, 32.0]]))
        density = density_from_points(scene, 4.0)
        assert abs(density.sum() - 1.0) < 1e-6

    def test_three_points_against_oracle(self):
        points = np.array([[10.0, 12.0], [40.0, 45.0], [55.0, 20.0]])
        scene = Scene(image=np.zeros((64, 64)), points=points)
        density = density_from_points(scene, 4.0)
        assert abs(density.sum() - 3.0) < 1e-6
        np.testing.assert_allclose(density, density_oracle(scene, 4.0), atol=1e-12)
        # each kernel's argmax sits at its point
        for row, col in points:
            r, c = int(row), int(col)
            window = density[r - 2 : r + 3, c - 2 : c + 3]
            assert window.argmax() == 2 * 5 + 2

    def test_sum_equals_count_50_random_scenes(self):
        rng = np.random.default_rng(99)
        for trial in range(50):
            scene = generate_synthetic_scene(
                int(rng.integers(0, 2**31)), 48, 48, (0, 25), 0.4
            )
            density = density_from_points(scene, float(rng.uniform(1.0, 5.0)))
            assert abs(density.sum() - scene.count) < 1e-6

    def test_boundary_point_mass_renormalized(self):
        scene = Scene(image=np.zeros((64, 64)), points=np.array([[0.0, 0.0]]))
        density = density_from_points(scene, 4.0)
        assert abs(density.sum() - 1.0) < 1e-6

    def test_sigma_must_be_positive(self):
        scene = generate_synthetic_scene(0, 64, 64, (1, 1), 0.0)
        with pytest.raises(ConfigurationError):
            density_from_points(scene, 0.0)


class TestMaskFromDensity:
    def test_zero_map(self):
        assert mask_from_density(np.zeros((8, 8))).sum() == 0

    def test_single_positive_pixel(self):
        density = np.zeros((8, 8))
        density[3, 5] = 0.25
        mask = mask_from_density(density)
        assert mask.sum() == 1
        assert mask[3, 5] == 1

    def test_mask_is_kernel_support_disk(self):
        sigma = 4.0
        scene = Scene(image=np.zeros((64, 64)), points=np.array([[32.0, 32.0]]))
        mask = mask_from_density(density_from_points(scene, sigma))
        ys, xs = np.mgrid[0:64, 0:64].astype(float)
        inside = ((ys - 32) ** 2 + (xs - 32) ** 2) <= (4 * sigma) ** 2
        np.testing.assert_array_equal(mask.astype(bool), inside)

    def test_values_binary(self):
        scene = generate_synthetic_scene(3, 64, 64, (4, 9), 0.3)
        mask = mask_from_density(density_from_points(scene, 3.0))
        assert set(np.unique(mask)).issubset({0, 1})

    def test_rethresholding_idempotent(self):
        scene = generate_synthetic_scene(5, 64, 64, (4, 9), 0.3)
        mask = mask_from_density(density_from_points(scene, 3.0))
        np.testing.assert_array_equal(mask_from_density(mask.astype(float)), mask)


class TestPooling:
    def test_density_pooling_preserves_mass(self):
        rng = np.random.default_rng(0)
        density = rng.random((16, 16))
        pooled = pool_density(density, 4)
        assert pooled.shape == (4, 4)
        assert abs(pooled.sum() - density.sum()) < 1e-9

    def test_mask_pooling_is_block_max(self):
        mask = np.zeros((8, 8))
        mask[0, 0] = 1
        pooled = pool_mask(mask, 4)
        assert pooled[0, 0] == 1
        assert pooled.sum() == 1

    def test_indivisible_shape_rejected(self):
        with pytest.raises(InputError):
            pool_density(np.zeros((10, 10)), 4)


class TestBatches:
    @staticmethod
    def _pool(n=4, side=32, sigma=3.0, seed=0):
        pool = []
        for i in range(n):
            scene = generate_synthetic_scene(seed + i, side, side, (2, 6), 0.3)
            density = density_from_points(scene, sigma)
            pool.append((scene.image, density, mask_from_density(density).astype(float)))
        return pool

    def test_no_flip_patch_is_subgrid(self):
        pool = self._pool()
        rng = np.random.default_rng(0)
        batch = make_batch(pool, [p[0] for p in pool], rng, patch=16, flip_p=0.0,
                           n_labeled=3, n_unlabeled=2)
        assert batch.labeled_images.shape == (3, 16, 16)
        assert batch.unlabeled_images.shape == (2, 16, 16)
        found = False
        img = batch.labeled_images[0]
        for src, density, _ in pool:
            for top in range(17):
                for left in range(17):
                    if np.array_equal(src[top : top + 16, left : left + 16], img):
                        np.testing.assert_array_equal(
                            batch.labeled_density[0], density[top : top + 16, left : left + 16]
                        )
                        found = True
        assert found

    def test_flip_preserves_mass(self):
        density = np.arange(64.0).reshape(8, 8)
        (flipped,) = crop_flip([density], 0, 0, 8, True)
        np.testing.assert_array_equal(flipped, density[:, ::-1])
        assert flipped.sum() == density.sum()

    def test_same_rng_same_batch(self):
        pool = self._pool()
        a = make_batch(pool, [p[0] for p in pool], np.random.default_rng(7), 16, 0.5, 4, 4)
        b = make_batch(pool, [p[0] for p in pool], np.random.default_rng(7), 16, 0.5, 4, 4)
        np.testing.assert_array_equal(a.labeled_images, b.labeled_images)
        np.testing.assert_array_equal(a.labeled_density, b.labeled_density)
        np.testing.assert_array_equal(a.unlabeled_images, b.unlabeled_images)

    def test_small_image_rejected(self):
        pool = self._pool(side=32)
        with pytest.raises(InputError):
            make_batch(pool, [p[0] for p in pool], np.random.default_rng(0), 48, 0.0, 2, 0)

    def test_crop_flip_commutes_with_masking(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            scene = generate_synthetic_scene(int(rng.integers(0, 1 << 30)), 40, 40, (1, 6), 0.2)
            density = density_from_points(scene, float(rng.uniform(1.5, 4.0)))
            top, left = (int(v) for v in rng.integers(0, 24, 2))
            flip = bool(rng.random() < 0.5)
            (cropped_density,) = crop_flip([density], top, left, 16, flip)
            (cropped_mask,) = crop_flip([mask_from_density(density)], top, left, 16, flip)
            np.testing.assert_array_equal(mask_from_density(cropped_density), cropped_mask)

    def test_crop_mass_never_renormalized(self):
        pool = self._pool()
        rng = np.random.default_rng(3)
        batch = make_batch(pool, [p[0] for p in pool], rng, 16, 0.0, 8, 0)
        sums = batch.labeled_density.sum(axis=(1, 2))
        assert np.all(sums <= max(p[1].sum() for p in pool) + 1e-9)


class TestDiskFormats:
    def test_points_round_trip(self, tmp_path):
        points = np.array([[3, 4], [10, 11], [0, 31]], dtype=float)
        path = tmp_path / "ann.txt"
        save_points(path, points)
        assert path.read_text() == "3 4\n10 11\n0 31\n"
        np.testing.assert_array_equal(load_points(path), points)

    def test_malformed_annotation_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 4 5\n")
        with pytest.raises(InputError):
            load_points(path)

    def test_scene_round_trip(self, tmp_path):
        scene = generate_synthetic_scene(4, 48, 64, (3, 7), 0.5, id="rt")
        save_scene(tmp_path, scene)
        loaded = load_scene(tmp_path, "rt")
        assert loaded.id == "rt"
        np.testing.assert_array_equal(loaded.points, scene.points)
        # images are 8-bit quantized on disk
        assert np.abs(loaded.image - scene.image).max() <= (0.5 / 255 + 1e-12)

    def test_density_grid_round_trip(self, tmp_path):
        scene = generate_synthetic_scene(5, 48, 48, (4, 9), 0.2)
        density = density_from_points(scene, 3.0)
        path = tmp_path / "density.bin"
        write_density_grid(path, density, scene.count)
        grid, count = read_density_grid(path)
        assert count == scene.count
        np.testing.assert_array_equal(grid, density.astype(np.float32))

    def test_generate_dataset_split_arithmetic(self, tmp_path):
        splits = generate_dataset(tmp_path, n=60, seed=0, labeled_split=0.5, val_fraction=0.1)
        assert (len(splits.labeled), len(splits.unlabeled), len(splits.val)) == (27, 27, 6)
        manifest = read_manifest(tmp_path)
        assert (len(manifest["labeled"]), len(manifest["unlabeled"]), len(manifest["val"])) == (
            27, 27, 6,
        )

    def test_generate_dataset_deterministic(self, tmp_path):
        generate_dataset(tmp_path / "a", n=12, seed=3)
        generate_dataset(tmp_path / "b", n=12, seed=3)
        text_a = (tmp_path / "a" / "manifest.txt").read_text()
        text_b = (tmp_path / "b" / "manifest.txt").read_text()
        assert text_a == text_b
        ds_a = load_dataset(tmp_path / "a")
        ds_b = load_dataset(tmp_path / "b")
        for scene_a, scene_b in zip(ds_a.all_scenes, ds_b.all_scenes):
            np.testing.assert_array_equal(scene_a.image, scene_b.image)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(InputError):
            load_dataset(tmp_path)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**20),
    sigma=st.floats(1.0, 5.0),
    stride=st.sampled_from([2, 4]),
)
def test_mask_derivation_commutes_with_pooling_support(seed, sigma, stride):
    """Max-pooled mask equals the support of the sum-pooled density."""
    scene = generate_synthetic_scene(seed, 32, 32, (0, 8), 0.3)
    density = density_from_points(scene, sigma)
    mask = mask_from_density(density)
    np.testing.assert_array_equal(
        pool_mask(mask, stride) > 0, pool_density(density, stride) > 0
    )
