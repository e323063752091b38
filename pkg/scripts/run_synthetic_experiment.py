#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate data, train, evaluate, predict.

Produces a self-contained run directory with the dataset, training history,
best checkpoint, evaluation report and predicted masks.
"""

import argparse
from pathlib import Path

from ultralbm.cli import main as cli


def run(argv):
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/synthetic")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--variant", default="full", choices=["full", "tiny"])
    args = parser.parse_args()

    out = Path(args.out_dir)
    data_dir = out / "data"
    run(["gendata", "--count", str(args.count), "--size", str(args.size),
         "--seed", str(args.seed), "--out-dir", str(data_dir)])
    run(["train", "--data-dir", str(data_dir), "--out-dir", str(out / "train"),
         "--variant", args.variant, "--epochs", str(args.epochs),
         "--image-size", str(args.size), "--split-ratio", "0.8",
         "--seed", str(args.seed)])
    ckpt = out / "train" / "best.ckpt.npz"
    run(["eval", "--checkpoint", str(ckpt), "--data-dir", str(data_dir),
         "--image-size", str(args.size), "--out-dir", str(out / "eval")])
    run(["predict", "--checkpoint", str(ckpt), "--data-dir", str(data_dir),
         "--image-size", str(args.size), "--out-dir", str(out / "predictions")])
    print(f"artifacts under {out}")


if __name__ == "__main__":
    main()
