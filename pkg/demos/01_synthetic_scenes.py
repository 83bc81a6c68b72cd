"""Synthetic crowd scenes and their ground truth, step by step.

Run:  python demos/01_synthetic_scenes.py
Writes renderings under demo_out/01/.
"""
from pathlib import Path

import numpy as np

from semicount.data import density_from_points, generate_synthetic_scene, mask_from_density, pool_density
from semicount.imgio import colormap, binary_colormap, save_gray_png, save_rgb_png

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

# A scene is an image plus head-centre points.  Same seed, same scene.
scene = generate_synthetic_scene(seed=7, h=80, w=80, count_range=(8, 16), clutter_level=0.8)
print(f"scene {scene.id}: {scene.shape[0]}x{scene.shape[1]}, {scene.count} people")
print("first three head centres (row, col):")
print(scene.points[:3])

# Density ground truth: one unit-mass Gaussian kernel per head.  Kernels are
# cut at four standard deviations and renormalized, so the total mass equals
# the number of people exactly.
density = density_from_points(scene, sigma=2.5)
print(f"\ndensity sum = {density.sum():.9f}  (annotated count = {scene.count})")

# The binary crowd mask is simply the support of the density map.
mask = mask_from_density(density)
print(f"mask covers {mask.mean():.1%} of the image")

# Training targets live at the head's stride-4 resolution.  Block-summing
# keeps the mass, so counts remain comparable after pooling.
coarse = pool_density(density, stride=4)
print(f"pooled {coarse.shape} density sum = {coarse.sum():.9f}")

save_gray_png(out / "scene.png", scene.image)
save_rgb_png(out / "density.png", colormap(density))
save_rgb_png(out / "mask.png", binary_colormap(1 - mask))
print(f"\nwrote {out}/scene.png, density.png, mask.png")

# Clutter is the difficulty dial: distractor blobs overlap the dimmest true
# heads, so higher clutter means genuinely ambiguous counting.
for clutter in (0.0, 0.5, 1.0):
    s = generate_synthetic_scene(seed=7, h=80, w=80, count_range=(10, 10), clutter_level=clutter)
    save_gray_png(out / f"clutter_{clutter:.1f}.png", s.image)
print(f"wrote clutter_0.0/0.5/1.0.png for a side-by-side look")
