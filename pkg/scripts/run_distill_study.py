#!/usr/bin/env python3
"""Distillation ablation on the synthetic task.

Trains the full-width teacher once, then trains half-width students under
three objectives (no distillation, KL only, full hybrid strategy), three
seeds each, and prints the mean +/- std val IoU per arm.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from ultralbm.data import SynthSpec, generate_synthetic, split_dataset
from ultralbm.losses import DistillWeights
from ultralbm.model import ModelConfig, build_model, save_checkpoint
from ultralbm.train import TrainConfig, distill_train, enable_determinism, train

ARMS = {
    "no_distill": DistillWeights(1.0, 0.0, 0.0, 0.0),
    "kl_distill": DistillWeights(1.0, 1.0, 0.0, 0.0),
    "full_strategy": DistillWeights(1.0, 1.0, 0.5, 0.5),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/distill_study")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seeds", default="0,1,2")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]

    samples = generate_synthetic(SynthSpec(count=args.count, size=args.size, seed=0))
    train_set, val_set = split_dataset(samples, ratio=0.8, seed=0)

    enable_determinism(0)
    teacher = build_model(ModelConfig())
    cfg = TrainConfig(epochs=args.epochs, batch_size=8, image_size=args.size, seed=0)
    _, best = train(teacher, train_set, val_set, cfg, out_dir=out / "teacher")
    save_checkpoint(teacher, out / "teacher" / "best.ckpt.npz")
    print(f"teacher: best val IoU {best['val_iou']:.4f}")

    student_cfg = ModelConfig.tiny()
    summary = {"teacher_val_iou": best["val_iou"], "arms": {}}
    for arm, weights in ARMS.items():
        ious = []
        for seed in seeds:
            scfg = TrainConfig(epochs=args.epochs, batch_size=8,
                               image_size=args.size, seed=seed)
            _, _, sbest = distill_train(student_cfg, teacher, train_set, val_set,
                                        scfg, weights, out_dir=out / arm / f"seed{seed}")
            ious.append(sbest["val_iou"])
            print(f"  {arm} seed {seed}: {sbest['val_iou']:.4f}")
        summary["arms"][arm] = {
            "mean": float(np.mean(ious)),
            "std": float(np.std(ious)),
            "ious": ious,
        }
        print(f"{arm}: {summary['arms'][arm]['mean']:.4f} "
              f"± {summary['arms'][arm]['std']:.4f}")

    with open(out / "study_summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    print(f"summary written to {out / 'study_summary.json'}")


if __name__ == "__main__":
    main()
