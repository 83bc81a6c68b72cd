"""The differentiable density-to-mask transformation layer.

Run:  python demos/02_transformation_layer.py
"""
import numpy as np

from semicount.transform import TransformConfig, approx_segmentation, transform_gradient

cfg = TransformConfig()  # gain 6000 by default
print(f"layer: x -> 2*sigmoid({cfg.gain:g} * x) - 1   (equals tanh({cfg.gain:g} * x / 2))")

# The layer is a steep soft step: zero stays zero, and anything visibly
# positive saturates to one.  That approximates the hard rule
# "mask = 1 where density > 0" while staying differentiable.
for x in (0.0, 1e-5, 1e-4, 1e-3, 1e-2):
    y = approx_segmentation(np.array([x]), cfg)[0]
    g = transform_gradient(np.array([x]), cfg)[0]
    print(f"  x = {x:8.0e}   out = {y:.12f}   d out/d x = {g:10.4f}")

# Gradient sanity: compare the closed form against central differences.
rng = np.random.default_rng(0)
x = rng.random(1000) * 1e-3
step = 1e-9
numeric = (approx_segmentation(x + step, cfg) - approx_segmentation(x - step, cfg)) / (2 * step)
analytic = transform_gradient(x, cfg)
rel = np.abs(numeric - analytic) / np.maximum(np.abs(numeric), 1e-30)
print(f"\nfinite-difference check over 1000 random inputs: worst relative error {rel.max():.2e}")

# Thresholding the output at one half recovers an indicator with a narrow
# transition band of width about log(3)/gain.
band = np.log(3.0) / cfg.gain
print(f"output > 0.5 exactly when density > log(3)/gain = {band:.2e}")
