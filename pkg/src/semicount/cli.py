"""Command-line entry points: generate, train, eval, export, ablate.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.  Relative --out paths resolve under $SEMICOUNT_OUT_ROOT
when that variable is set.  Every command writes a frozen copy of its
resolved settings next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

# Pin BLAS pools before numpy loads so CLI runs are bit-reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np

from . import evaluation, trainer
from .data import DatasetSplits, generate_dataset, load_dataset
from .errors import ConfigurationError, InputError, NumericsError
from .model import load_checkpoint
from .trainer import TrainConfig, config_from_file, config_to_text, fit

# Uncertainty-gating variants mirroring the ablation table: which map (if
# any) gates the segmentation consistency and which weights the density one.
UNCERTAINTY_VARIANTS: list[tuple[str, dict]] = [
    ("no_uncertainty", {"seg_gate": "none", "density_gate": "none"}),
    ("hard_only", {"seg_gate": "hard", "density_gate": "none"}),
    ("soft_only", {"seg_gate": "none", "density_gate": "soft"}),
    ("double_hard", {"seg_gate": "hard", "density_gate": "hard"}),
    ("double_soft", {"seg_gate": "soft", "density_gate": "soft"}),
    ("both", {"seg_gate": "hard", "density_gate": "soft"}),
]

POOL_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_out(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get("SEMICOUNT_OUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_frozen(out_dir: Path, name: str, settings: dict) -> None:
    lines = [f"{key} = {value}" for key, value in settings.items()]
    (out_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_train_config(args) -> TrainConfig:
    overrides: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = trainer._parse_value(key, value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if args.config:
        return config_from_file(args.config, overrides)
    return TrainConfig(**overrides)


def _cmd_generate(args) -> int:
    out_dir = _resolve_out(args.out)
    splits = generate_dataset(
        out_dir,
        n=args.n,
        seed=args.seed if args.seed is not None else 0,
        h=args.height,
        w=args.width,
        count_range=(args.count_min, args.count_max),
        clutter_level=args.clutter,
        labeled_split=args.split,
        val_fraction=args.val_frac,
    )
    _write_frozen(
        out_dir,
        "generate_config.txt",
        {
            "n": args.n, "seed": args.seed if args.seed is not None else 0,
            "height": args.height, "width": args.width,
            "count_min": args.count_min, "count_max": args.count_max,
            "clutter": args.clutter, "split": args.split, "val_frac": args.val_frac,
        },
    )
    print(
        f"wrote {args.n} scenes to {out_dir}: {len(splits.labeled)} labeled, "
        f"{len(splits.unlabeled)} unlabeled, {len(splits.val)} val"
    )
    return 0


def _cmd_train(args) -> int:
    config = _load_train_config(args)
    dataset = load_dataset(args.data)
    out_dir = _resolve_out(args.out)
    result = fit(config, dataset, out_dir=out_dir)
    print(
        f"trained mode={config.mode} for {result.state.epoch + 1} epochs; "
        f"best val MAE {result.best_val_mae:.3f} (epoch {result.best_epoch}); "
        f"checkpoints in {out_dir}"
    )
    return 0


def _split_scenes(dataset: DatasetSplits, split: str):
    if split == "all":
        return dataset.all_scenes
    return getattr(dataset, split)


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    scenes = _split_scenes(dataset, args.split)
    if not scenes:
        raise InputError(f"split {args.split!r} of {args.data} holds no scenes")
    result = evaluation.evaluate(ckpt.student, ckpt.config, scenes, tile=args.tile)
    out_dir = _resolve_out(args.out)
    evaluation.write_eval_result(result, out_dir)
    _write_frozen(
        out_dir,
        "eval_config.txt",
        {"checkpoint": args.checkpoint, "data": args.data, "split": args.split,
         "tile": args.tile, "seed": args.seed},
    )
    print(result.to_table())
    return 0


def _cmd_export(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    scenes = {scene.id: scene for scene in dataset.all_scenes}
    if args.scene is None:
        scene = dataset.val[0] if dataset.val else dataset.all_scenes[0]
    elif args.scene in scenes:
        scene = scenes[args.scene]
    else:
        raise InputError(f"scene {args.scene!r} not found in {args.data}")
    out_dir = _resolve_out(args.out)
    written = evaluation.export_maps(
        ckpt.student, ckpt.teacher, ckpt.config, scene, out_dir,
        passes=args.passes, seed=args.seed if args.seed is not None else 0,
    )
    _write_frozen(
        out_dir,
        "export_config.txt",
        {"checkpoint": args.checkpoint, "data": args.data, "scene": scene.id,
         "passes": args.passes, "seed": args.seed},
    )
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def _limit_pools(dataset: DatasetSplits, n_labeled: int, n_unlabeled: int) -> DatasetSplits:
    return DatasetSplits(
        labeled=dataset.labeled[:n_labeled],
        unlabeled=dataset.unlabeled[:n_unlabeled],
        val=dataset.val,
    )


def _cmd_ablate(args) -> int:
    base = _load_train_config(args)
    dataset = load_dataset(args.data)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigurationError("--seeds must name at least one seed")
    out_dir = _resolve_out(args.out)

    if args.preset == "uncertainty":
        variants = [
            (name, dict(overrides, mode="semi")) for name, overrides in UNCERTAINTY_VARIANTS
        ]
    elif args.preset == "pool-size":
        variants = []
        for frac in POOL_FRACTIONS:
            n = max(1, int(len(dataset.labeled) * frac))
            variants.append((f"labeled_{int(frac * 100)}pct", {"mode": "semi", "_n_labeled": n}))
    else:
        raise ConfigurationError(f"unknown preset {args.preset!r}")

    rows = []
    for name, overrides in variants:
        n_labeled = overrides.pop("_n_labeled", len(dataset.labeled))
        subset = _limit_pools(dataset, n_labeled, len(dataset.unlabeled))
        maes, rmses = [], []
        for seed in seeds:
            config = replace(base, seed=seed, **overrides)
            run_dir = out_dir / f"{name}_seed{seed}"
            result = fit(config, subset, out_dir=run_dir)
            eval_result = evaluation.evaluate(result.best_student, result.state.net, dataset.val)
            maes.append(eval_result.mae)
            rmses.append(eval_result.rmse)
        rows.append((name, float(np.median(maes)), float(np.median(rmses)), maes))

    table_lines = [f"{'variant':<18}{'MAE (median)':>14}{'RMSE (median)':>15}  per-seed MAE"]
    for name, mae, rmse, maes in rows:
        per_seed = ", ".join(f"{m:.2f}" for m in maes)
        table_lines.append(f"{name:<18}{mae:>14.3f}{rmse:>15.3f}  [{per_seed}]")
    table = "\n".join(table_lines) + "\n"
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    with open(out_dir / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for name, mae, rmse, maes in rows:
            fh.write(json.dumps({"variant": name, "mae": mae, "rmse": rmse, "per_seed": maes}) + "\n")
    _write_frozen(
        out_dir,
        "ablate_config.txt",
        {"preset": args.preset, "data": args.data, "seeds": args.seeds,
         "config": args.config or "(defaults)"},
    )
    print(table)
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="semicount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: _Parser) -> None:
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="write a synthetic dataset with a split manifest")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--count-min", type=int, default=3)
    p.add_argument("--count-max", type=int, default=18)
    p.add_argument("--clutter", type=float, default=0.5)
    p.add_argument("--split", type=float, default=0.5, help="labeled share of non-val scenes")
    p.add_argument("--val-frac", type=float, default=0.1)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=trainer.MODES, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any train config key (repeatable)")

    p = sub.add_parser("eval", help="counting metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "labeled", "unlabeled", "val"), default="all")
    p.add_argument("--tile", type=int, default=None)

    p = sub.add_parser("export", help="visualize predictions and uncertainty maps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", default=None, help="scene id (default: first val scene)")
    p.add_argument("--passes", type=int, default=8)

    p = sub.add_parser("ablate", help="run an experiment preset over several seeds")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=("uncertainty", "pool-size"), required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export": _cmd_export,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"semicount {args.command}: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"semicount {args.command}: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"semicount {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
