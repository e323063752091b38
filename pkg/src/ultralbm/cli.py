"""Command-line interface.

Subcommands: train, distill, eval, predict, analyze, gendata, gradcheck.
Options come from a JSON config file (--config) with flat keys, overridden
by the matching CLI flags; unknown config keys are a hard error. Every run
writes the effective configuration next to its outputs so it can be
reproduced exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .complexity import count_flops, count_params
from .data import (
    SynthSpec,
    generate_synthetic,
    load_dataset,
    load_images,
    save_dataset,
    split_dataset,
    compute_norm_stats,
    normalize_image,
)
from .gradcheck import finite_diff_gradcheck, gradcheck_model_params
from .losses import DistillWeights, bce_dice_loss
from .metrics import dsc, iou
from .model import ConfigError, ModelConfig, build_model, load_checkpoint
from .train import TrainConfig, TrainingDiverged, distill_train, enable_determinism, train

__all__ = ["main"]

_PATH_KEYS = {
    "data_dir": None,
    "out_dir": "runs",
    "checkpoint": None,
    "teacher_checkpoint": None,
    "input_size": 256,
    "variant": "full",
    "seeds": None,
    "split_ratio": 0.7,
}


def _dataclass_keys(cls):
    return {f.name: f for f in dataclasses.fields(cls)}

_MODEL_KEYS = _dataclass_keys(ModelConfig)
_TRAIN_KEYS = _dataclass_keys(TrainConfig)
_DISTILL_KEYS = _dataclass_keys(DistillWeights)
_SYNTH_KEYS = _dataclass_keys(SynthSpec)
_ALL_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_DISTILL_KEYS, **_SYNTH_KEYS}


def _coerce(value, sample_default):
    if isinstance(sample_default, tuple):
        return tuple(value)
    return value


def _parse_tuple(text, cast=int):
    return tuple(cast(part) for part in str(text).replace(",", " ").split())


def _add_flags(parser, sections):
    seen = set()
    for keys in sections:
        for name, f in keys.items():
            if name in seen:
                continue
            seen.add(name)
            flag = "--" + name.replace("_", "-")
            help_text = f"default: {f.default}"
            if f.type in ("bool", bool):
                parser.add_argument(flag, default=None, help=help_text,
                                    type=lambda s: s.lower() in ("1", "true", "yes"))
            elif isinstance(f.default, tuple):
                parser.add_argument(flag, default=None, type=str, help=help_text)
            elif f.type in ("int", int):
                parser.add_argument(flag, default=None, type=int, help=help_text)
            elif f.type in ("float", float) or name in ("grad_clip", "dt_rank"):
                parser.add_argument(flag, default=None, type=float, help=help_text)
            else:
                parser.add_argument(flag, default=None, type=str, help=help_text)
    for name, default in _PATH_KEYS.items():
        parser.add_argument("--" + name.replace("_", "-"), default=None, type=str,
                            help=f"default: {default}")


def _effective_config(args, sections):
    """file < flag resolution with unknown-key and typo guarding."""
    merged = {}
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        known = set(_ALL_KEYS) | set(_PATH_KEYS)
        for key in file_cfg:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        merged.update(file_cfg)
    for name in list(_ALL_KEYS) + list(_PATH_KEYS):
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value

    def build(cls, keys):
        kwargs = {}
        for name, f in keys.items():
            if name in merged:
                value = merged[name]
                if isinstance(f.default, tuple) and isinstance(value, str):
                    cast = int if name != "stage_kinds" else str
                    value = _parse_tuple(value, cast)
                elif isinstance(f.default, tuple):
                    value = tuple(value)
                kwargs[name] = value
        return cls(**kwargs)

    paths = {name: merged.get(name, default) for name, default in _PATH_KEYS.items()}
    if paths["variant"] not in ("full", "tiny"):
        raise ConfigError(f"unknown variant {paths['variant']!r}")
    if paths["variant"] == "tiny" and "channels" not in merged:
        model_cfg = ModelConfig.tiny(**{
            k: v for k, v in build(ModelConfig, _MODEL_KEYS).__dict__.items()
            if k in merged
        })
    else:
        model_cfg = build(ModelConfig, _MODEL_KEYS)
    train_cfg = build(TrainConfig, _TRAIN_KEYS)
    distill_w = build(DistillWeights, _DISTILL_KEYS)
    synth = build(SynthSpec, _SYNTH_KEYS)
    return model_cfg, train_cfg, distill_w, synth, paths, merged


def _dump_effective(out_dir, merged):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "effective_config.json", "w") as f:
        json.dump(merged, f, indent=2, default=str)


def _load_split(paths, train_cfg, ratio):
    samples = load_dataset(paths["data_dir"], size=train_cfg.image_size)
    return split_dataset(samples, ratio=ratio, seed=train_cfg.seed)


def _seed_list(paths, train_cfg):
    if paths["seeds"]:
        return [int(s) for s in str(paths["seeds"]).replace(",", " ").split()]
    return [train_cfg.seed]


def _summarize_seeds(results, out_dir):
    ious = [r["best_val_iou"] for r in results]
    summary = {
        "seeds": [r["seed"] for r in results],
        "best_val_iou_mean": float(np.mean(ious)),
        "best_val_iou_std": float(np.std(ious)),
        "runs": results,
    }
    with open(Path(out_dir) / "seeds_summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def cmd_train(args):
    model_cfg, train_cfg, _, _, paths, merged = _effective_config(args, None)
    if not paths["data_dir"]:
        raise ConfigError("train requires --data-dir")
    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)
    results = []
    for seed in _seed_list(paths, train_cfg):
        cfg = dataclasses.replace(train_cfg, seed=seed)
        run_dir = out_dir / f"seed{seed}" if len(_seed_list(paths, train_cfg)) > 1 else out_dir
        if cfg.deterministic:
            enable_determinism(seed)
        else:
            torch.manual_seed(seed)
        train_set, val_set = _load_split(paths, cfg, paths["split_ratio"])
        model = build_model(model_cfg)
        history, best = train(model, train_set, val_set, cfg, out_dir=run_dir)
        results.append({"seed": seed, "best_val_iou": best["val_iou"],
                        "best_epoch": best["epoch"]})
        print(f"seed {seed}: best val IoU {best['val_iou']:.4f} at epoch {best['epoch']}")
    if len(results) > 1:
        s = _summarize_seeds(results, out_dir)
        print(f"mean best val IoU {s['best_val_iou_mean']:.4f} "
              f"± {s['best_val_iou_std']:.4f}")
    return 0


def cmd_distill(args):
    model_cfg, train_cfg, weights, _, paths, merged = _effective_config(args, None)
    if not paths["data_dir"]:
        raise ConfigError("distill requires --data-dir")
    if not paths["teacher_checkpoint"]:
        raise ConfigError("distill requires --teacher-checkpoint")
    teacher_path = Path(paths["teacher_checkpoint"])
    if not teacher_path.exists():
        raise FileNotFoundError(f"teacher checkpoint not found: {teacher_path}")
    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)

    teacher = load_checkpoint(teacher_path)
    # default student: teacher widths halved, same topology
    if "channels" not in merged:
        model_cfg = dataclasses.replace(
            teacher.cfg, channels=tuple(c // 2 for c in teacher.cfg.channels)
        )
    results = []
    for seed in _seed_list(paths, train_cfg):
        cfg = dataclasses.replace(train_cfg, seed=seed)
        run_dir = out_dir / f"seed{seed}" if len(_seed_list(paths, train_cfg)) > 1 else out_dir
        train_set, val_set = _load_split(paths, cfg, paths["split_ratio"])
        student, history, best = distill_train(
            model_cfg, teacher, train_set, val_set, cfg, weights, out_dir=run_dir
        )
        results.append({"seed": seed, "best_val_iou": best["val_iou"],
                        "best_epoch": best["epoch"]})
        print(f"seed {seed}: best val IoU {best['val_iou']:.4f} at epoch {best['epoch']}")
    if len(results) > 1:
        s = _summarize_seeds(results, out_dir)
        print(f"mean best val IoU {s['best_val_iou_mean']:.4f} "
              f"± {s['best_val_iou_std']:.4f}")
    return 0


def cmd_eval(args):
    _, train_cfg, _, _, paths, merged = _effective_config(args, None)
    if not paths["checkpoint"]:
        raise ConfigError("eval requires --checkpoint")
    ckpt = Path(paths["checkpoint"])
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    if not paths["data_dir"]:
        raise ConfigError("eval requires --data-dir")
    model = load_checkpoint(ckpt)
    model.eval()
    samples = load_dataset(paths["data_dir"], size=train_cfg.image_size)
    stats = compute_norm_stats(samples)
    scores = {"iou": [], "dsc": []}
    with torch.no_grad():
        for s in samples:
            image = torch.from_numpy(normalize_image(s.image, stats))[None]
            mask = torch.from_numpy(s.mask)[None]
            pred = model(image)
            scores["iou"].append(iou(pred, mask))
            scores["dsc"].append(dsc(pred, mask))
    report = {
        "checkpoint": str(ckpt),
        "samples": len(samples),
        "iou_mean": float(np.mean(scores["iou"])),
        "dsc_mean": float(np.mean(scores["dsc"])),
    }
    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)
    with open(out_dir / "eval.json", "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report))
    return 0


def cmd_predict(args):
    _, train_cfg, _, _, paths, merged = _effective_config(args, None)
    if not paths["checkpoint"]:
        raise ConfigError("predict requires --checkpoint")
    ckpt = Path(paths["checkpoint"])
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    if not paths["data_dir"]:
        raise ConfigError("predict requires --data-dir")
    from PIL import Image

    model = load_checkpoint(ckpt)
    model.eval()
    images = load_images(paths["data_dir"], size=train_cfg.image_size)
    stats = (np.full(3, 0.5, np.float32), np.full(3, 0.5, np.float32))
    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)
    with torch.no_grad():
        for stem, image in images:
            x = torch.from_numpy(normalize_image(image, stats))[None]
            pred = model(x)[0, 0].numpy()
            mask = ((pred > 0.5) * 255).astype(np.uint8)
            Image.fromarray(mask, mode="L").save(out_dir / f"{stem}_pred.png")
    print(f"wrote {len(images)} predictions to {out_dir}")
    return 0


def cmd_analyze(args):
    model_cfg, _, _, _, paths, merged = _effective_config(args, None)
    model = build_model(model_cfg)
    params = count_params(model)
    size = int(paths["input_size"])
    flops = count_flops(model_cfg, (1, model_cfg.in_channels, size, size))
    report = {
        "variant": paths["variant"],
        "total_params": params.total_params,
        "param_breakdown": params.param_breakdown,
        "input_size": size,
        "flops_mac": flops.total_flops,
        "flops_2mac": flops.flops_2mac,
        "flop_convention": flops.convention,
        "elementwise_ops": flops.elementwise_ops,
        "flop_breakdown": flops.flop_breakdown,
    }
    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)
    with open(out_dir / "complexity.json", "w") as f:
        json.dump(report, f, indent=2)
    print(f"params: {params.total_params} ({params.total_params / 1e6:.4f} M)")
    print(f"MACs @ {size}x{size}: {flops.total_flops} "
          f"({flops.total_flops / 1e9:.4f} G, 2*MAC {flops.flops_2mac / 1e9:.4f} G)")
    return 0


def cmd_gendata(args):
    _, _, _, synth, paths, merged = _effective_config(args, None)
    samples = generate_synthetic(synth)
    out_dir = Path(paths["out_dir"])
    save_dataset(samples, out_dir)
    _dump_effective(out_dir, merged)
    print(f"wrote {len(samples)} samples to {out_dir}")
    return 0


def cmd_gradcheck(args):
    model_cfg, train_cfg, _, _, paths, merged = _effective_config(args, None)
    enable_determinism(train_cfg.seed)
    results = {}

    x = torch.randn(6, dtype=torch.float64)
    results["quadratic"] = finite_diff_gradcheck(lambda t: 0.5 * (t ** 2).sum(), x).max_rel_err
    results["sin_sum"] = finite_diff_gradcheck(lambda t: torch.sin(t).sum(), x).max_rel_err

    pred = torch.rand(1, 1, 4, 4, dtype=torch.float64) * 0.8 + 0.1
    target = (torch.rand(1, 1, 4, 4) > 0.5).double()
    results["bce_dice"] = finite_diff_gradcheck(
        lambda t: bce_dice_loss(t, target), pred
    ).max_rel_err

    tiny = build_model(dataclasses.replace(ModelConfig.tiny(), scan_impl="parallel")).double()
    tiny.eval()
    probe = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    weights = torch.randn(1, 1, 32, 32, dtype=torch.float64)
    worst, _ = gradcheck_model_params(
        lambda: (tiny(probe) * weights).sum(), tiny, max_params=50
    )
    results["end_to_end"] = worst

    out_dir = Path(paths["out_dir"])
    _dump_effective(out_dir, merged)
    with open(out_dir / "gradcheck.json", "w") as f:
        json.dump(results, f, indent=2)
    failed = {k: v for k, v in results.items()
              if v > (1e-3 if k == "end_to_end" else 1e-4)}
    for name, err in results.items():
        print(f"{name}: max rel err {err:.3e}")
    if failed:
        raise TrainingDiverged(f"gradcheck failures: {failed}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "analyze": cmd_analyze,
    "gendata": cmd_gendata,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ultralbm",
        description="Ultralight bidirectional-Mamba segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default=None, help="JSON config file (flat keys)")
        _add_flags(p, [_MODEL_KEYS, _TRAIN_KEYS, _DISTILL_KEYS, _SYNTH_KEYS])
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
