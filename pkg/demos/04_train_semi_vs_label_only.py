"""Miniature semi-supervised vs label-only comparison.

Run:  python demos/04_train_semi_vs_label_only.py
Takes a few minutes on a laptop CPU; writes checkpoints under demo_out/04/.
For the full desk benchmark (120 train scenes, 3 seeds) see the README and
tests/test_acceptance.py.
"""
from pathlib import Path

from semicount.evaluation import evaluate
from semicount.presets import build_desk_benchmark, desk_train_config
from semicount.trainer import fit

out = Path("demo_out/04")
out.mkdir(parents=True, exist_ok=True)

# A shrunk benchmark: 40 train scenes (4 val / 18 labeled / 18 unlabeled)
# and 10 test scenes, with a shortened schedule.
dataset, test_scenes = build_desk_benchmark(out / "data", seed=0, n_train=40, n_test=10)
print(f"labeled {len(dataset.labeled)}, unlabeled {len(dataset.unlabeled)}, "
      f"val {len(dataset.val)}, test {len(test_scenes)}")

for mode in ("label_only", "semi"):
    config = desk_train_config(seed=0, mode=mode, epochs=40)
    result = fit(config, dataset, out_dir=out / mode)
    metrics = evaluate(result.best_student, result.state.net, test_scenes)
    print(f"{mode:11s}: best val MAE {result.best_val_mae:.2f} (epoch {result.best_epoch}), "
          f"test MAE {metrics.mae:.2f}, RMSE {metrics.rmse:.2f}")

print(f"\ncheckpoints and metrics logs are under {out}/label_only and {out}/semi")
print("the trend is noisy at this miniature scale; the acceptance benchmark")
print("runs three seeds at full desk scale before comparing medians")
