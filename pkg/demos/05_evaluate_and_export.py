"""Evaluate a trained checkpoint and export its qualitative maps.

Run demo 04 first, then:  python demos/05_evaluate_and_export.py
Writes renderings under demo_out/05/.
"""
import sys
from pathlib import Path

from semicount.data import load_dataset
from semicount.evaluation import boundary_entropy_gap, evaluate, export_maps, write_eval_result
from semicount.model import load_checkpoint

ckpt_path = Path("demo_out/04/semi/best.ckpt")
if not ckpt_path.exists():
    sys.exit("run demos/04_train_semi_vs_label_only.py first")

out = Path("demo_out/05")
ckpt = load_checkpoint(ckpt_path)
dataset = load_dataset("demo_out/04/data/test_seed0")
scenes = dataset.all_scenes

result = evaluate(ckpt.student, ckpt.config, scenes)
write_eval_result(result, out)
print(result.to_table())

# Qualitative panel for one scene: input, ground truth, predicted density,
# crowd probability, transformed density, entropy and both uncertainty maps.
scene = scenes[0]
written = export_maps(ckpt.student, ckpt.teacher, ckpt.config, scene, out / scene.id,
                      gt_sigma=2.5)
print(f"wrote {len(written)} files under {out / scene.id}")

# Trained teachers are least certain along crowd boundaries: compare mean
# entropy on a two-cell band around the mask boundary against the interior.
wins = total = 0
for s in scenes:
    gap = boundary_entropy_gap(ckpt.teacher or ckpt.student, ckpt.config, s, gt_sigma=2.5)
    if gap is None:
        continue
    total += 1
    band_mean, interior_mean = gap
    wins += band_mean > interior_mean
print(f"boundary entropy exceeds interior entropy on {wins}/{total} test scenes")
