"""Command-line entry points: generate, train, eval, robustness, ablate, report.

Exit status is 0 on success, 2 for invalid input or configuration and 3 when a
numeric failure (non-finite loss) aborts training.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ModelConfig, TrainConfig, split_config_dict
from .data import load_dataset
from .errors import NumericError, ShorefuseError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

# Flags that map one-to-one onto config keys.
_MODEL_FLAGS = {
    "beta": float,
    "n_c": int,
    "attention_heads": int,
    "n_prev_pool": int,
    "n_prev_pick": int,
    "encoder": str,
}
_TRAIN_FLAGS = {
    "iterations": int,
    "learning_rate": float,
    "batch_size": int,
    "momentum": float,
    "weight_decay": float,
    "seed": int,
    "pick_mode": str,
    "lr_schedule": str,
}
_SWITCHES = ("use_tpe", "use_man", "use_dcn", "use_contour_loss", "image_only")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file mirroring the model and train records")
    p.add_argument("--preset", choices=("full", "tiny"), help="base model preset (full-size encoder or tiny)")
    for name, kind in {**_MODEL_FLAGS, **_TRAIN_FLAGS}.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    p.add_argument("--input-size", dest="input_size", type=int, nargs=2, metavar=("H", "W"))
    for name in _SWITCHES:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, action=argparse.BooleanOptionalAction)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    raw = json.loads(args.config.read_text()) if args.config else {}
    model_raw = dict(raw.get("model", {})) if ("model" in raw or "train" in raw) else None
    train_raw = dict(raw.get("train", {})) if model_raw is not None else None
    if model_raw is None:
        model_keys = set(ModelConfig.__dataclass_fields__) | {"preset"}
        model_raw = {k: v for k, v in raw.items() if k in model_keys}
        train_raw = {k: v for k, v in raw.items() if k not in model_keys}
    if args.preset:
        model_raw["preset"] = args.preset
    for name in (*_MODEL_FLAGS, *_SWITCHES):
        if getattr(args, name) is not None:
            model_raw[name] = getattr(args, name)
    for name in _TRAIN_FLAGS:
        if getattr(args, name) is not None:
            train_raw[name] = getattr(args, name)
    if args.input_size:
        # Keep the encoder stride the base config implies.
        old = model_raw.get("input_size", [224, 224])
        grid = model_raw.get("feature_grid", [14, 14])
        stride = old[0] // grid[0]
        h, w = args.input_size
        model_raw["input_size"] = [h, w]
        model_raw["feature_grid"] = [h // stride, w // stride]
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ShorefuseError(f"--set expects KEY=VALUE, got {item!r}")
        target = train_raw if key in TrainConfig.__dataclass_fields__ else model_raw
        target[key] = _parse_value(value)
    return split_config_dict({"model": model_raw, "train": train_raw})


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    from .synthgen import generate_benchmark

    index = generate_benchmark(
        args.seed,
        args.out,
        n_sequences=args.n_sequences,
        n_frames=args.n_frames,
        resolution=tuple(args.resolution),
        jitter_levels=tuple(args.jitter_levels),
    )
    print(index)
    return EXIT_OK


def cmd_train(args) -> int:
    from .harness import train

    model_config, train_config = _configs(args)
    sequences = load_dataset(args.data, splits=("train",))
    log_path = args.log or args.out.with_suffix(".log.jsonl")
    result = train(sequences, model_config, train_config, out=args.out, log_path=log_path)
    print(f"checkpoint {result.checkpoint}; final loss {result.log[-1]['total']:.6f}" if result.log else result.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .fusion import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    sequences = load_dataset(args.data, splits=(args.split,))
    report = evaluate(
        model, sequences, model.config, args.band_px, seed=args.seed, pick_mode=args.pick_mode, zone_mode=args.zone_mode
    )
    out = args.out or Path("report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out, args.csv)
    print(json.dumps(report.aggregate, sort_keys=True))
    return EXIT_OK


def cmd_robustness(args) -> int:
    from .fusion import load_checkpoint
    from .harness import robustness_table, run_robustness

    model, _ = load_checkpoint(args.ckpt)
    sequences = load_dataset(args.data, splits=(args.split,))
    reports = run_robustness(model, sequences, band_px=args.band_px, seed=args.seed)
    payload = {
        "conditions": {name: r.to_dict() for name, r in reports.items()},
        "rows": robustness_table(reports),
    }
    _write_json(args.out, payload)
    for name, r in reports.items():
        print(f"{name:>14}  miou_selected {r.aggregate['miou_selected']:.4f}  miou_full {r.aggregate['miou_full']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .harness import run_ablation

    model_config, train_config = _configs(args)
    train_seqs = load_dataset(args.data, splits=("train",))
    test_seqs = load_dataset(args.data, splits=(args.split,))
    table = run_ablation(train_seqs, test_seqs, model_config, train_config, seeds=args.seeds, band_px=args.band_px)
    _write_json(args.out, table.to_dict())
    for row in table.rows:
        print(
            f"{row['config']:>14}  miou_selected {row['miou_selected']:.4f}  "
            f"miou_full {row['miou_full']:.4f}  params {row['parameter_count']}"
        )
    return EXIT_OK


def cmd_report(args) -> int:
    from .plots import plot_any

    written = plot_any(args.input, args.plots)
    for path in written:
        print(path)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shorefuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-sequences", type=int, default=10)
    p.add_argument("--n-frames", type=int, default=60)
    p.add_argument("--resolution", type=int, nargs=2, default=(224, 224), metavar=("H", "W"))
    p.add_argument("--jitter-levels", nargs="+", default=["low", "high"], choices=("low", "high"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--log", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--band-px", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--csv", type=Path, help="per-frame metrics")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pick-mode", default="random_k_of_m", choices=("random_k_of_m", "fixed_last_k"))
    p.add_argument("--zone-mode", default="symmetric", choices=("symmetric", "below"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="score under frame drops and reversed playback")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("robustness.json"))
    p.add_argument("--split", default="test")
    p.add_argument("--band-px", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("ablate", help="train and score every ablation variant")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("ablation.json"))
    p.add_argument("--split", default="test")
    p.add_argument("--band-px", type=int)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render PNG plots from a report, ablation, robustness or log file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--plots", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShorefuseError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
