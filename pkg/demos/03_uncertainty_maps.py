"""Monte-Carlo dropout uncertainty: entropy, hard mask, soft mask.

Run:  python demos/03_uncertainty_maps.py
Writes renderings under demo_out/03/.
"""
import math
from pathlib import Path

import numpy as np

from semicount.data import generate_synthetic_scene
from semicount.imgio import binary_colormap, colormap, save_rgb_png
from semicount.model import PerturbationConfig, desk_small, init_params
from semicount.uncertainty import (
    MAX_BINARY_ENTROPY,
    ThresholdSchedule,
    estimate_uncertainty,
)

out = Path("demo_out/03")
out.mkdir(parents=True, exist_ok=True)

cfg = desk_small(dropout_rate=0.5)
params = init_params(cfg, np.random.default_rng(0))
scene = generate_synthetic_scene(seed=3, h=80, w=80, count_range=(10, 14), clutter_level=0.8)

# Eight stochastic passes: fresh dropout masks and fresh input noise each
# time.  The per-pixel entropy of the averaged class score measures how much
# the passes disagree; with two classes it tops out at ln 2.
schedule = ThresholdSchedule(ramp_steps=100)
bundle, mean_density = estimate_uncertainty(
    params, cfg, scene.image[None], passes=8,
    perturb=PerturbationConfig(input_noise_std=0.05, dropout_active=True),
    rng=np.random.default_rng(1), schedule=schedule, step=0, weight=7.0,
)

entropy = bundle.entropy[0]
print(f"entropy range: [{entropy.min():.4f}, {entropy.max():.4f}]  (max possible ln 2 = {math.log(2):.4f})")

# Hard mask: keep only pixels whose entropy is below the ramped threshold.
# At step 0 the threshold sits at three quarters of the maximum.
print(f"threshold at step 0:   {schedule.threshold(0):.4f}")
print(f"threshold at ramp end: {schedule.threshold(100):.4f}")
print(f"hard mask keeps {bundle.hard[0].mean():.1%} of pixels at step 0")

# Soft mask: continuous confidence weights, 7 at full certainty, 0 at full
# uncertainty.
print(f"soft mask range: [{bundle.soft[0].min():.3f}, {bundle.soft[0].max():.3f}]")

save_rgb_png(out / "entropy.png", colormap(entropy, vmax=MAX_BINARY_ENTROPY))
save_rgb_png(out / "hard_mask.png", binary_colormap(bundle.hard[0]))
save_rgb_png(out / "soft_mask.png", colormap(bundle.soft[0], vmax=7.0))
print(f"\nwrote {out}/entropy.png, hard_mask.png, soft_mask.png")
print("note: this model is untrained, so the maps show raw ensemble noise;")
print("demo 05 exports the same maps from a trained checkpoint")
