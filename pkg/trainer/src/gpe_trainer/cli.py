"""Command line: train a correction network from a GPDS file."""

from __future__ import annotations

import argparse
import sys

from .train import TrainConfig, train


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="gpe-unet-train",
        description="Train the correction U-Net on solver trajectories",
    )
    ap.add_argument("--data", required=True, help="GPDS dataset path")
    ap.add_argument("--out", required=True, help="output GPUW archive path")
    ap.add_argument("--spec-out", help="sidecar path (default: <out>.json)")
    ap.add_argument("--loss-csv", help="per-epoch loss curve CSV")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--base-width", type=int, default=64)
    ap.add_argument("--val-fraction", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = TrainConfig(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
        base_width=args.base_width, val_fraction=args.val_fraction,
        seed=args.seed,
    )

    def progress(rec):
        val = "n/a" if rec["val_loss"] is None else f"{rec['val_loss']:.6e}"
        print(f"epoch {rec['epoch']:4d}  train {rec['train_loss']:.6e}  val {val}")

    train(args.data, cfg, out_archive=args.out, sidecar_path=args.spec_out,
          loss_csv=args.loss_csv, progress=progress)
    print(f"weights -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
