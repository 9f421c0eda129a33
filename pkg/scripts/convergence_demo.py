"""Train the tiny ViT on synthetic data and print the per-epoch log.

Reproduces the desk-scale convergence check: 256 images, lr 1e-3, 30 epochs.
"""

import argparse
import sys
import tempfile
import time

from vitforge.data import scan_dataset
from vitforge.model import ViT, ViTConfig
from vitforge.synthetic import make_dataset
from vitforge.training import TrainConfig, fit, write_curves


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--per-class", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--curves", help="optional CSV path for the loss/accuracy curves")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        root = make_dataset(tmp, {"train": args.per_class, "val": args.per_class // 4}, size=32, seed=args.seed)
        train, val = scan_dataset(root, "train"), scan_dataset(root, "val")
        cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
        t0 = time.perf_counter()
        logs, _ = fit(ViT(ViTConfig.tiny(), seed=args.seed), train, val, cfg, out=sys.stdout)
        print(f"{time.perf_counter() - t0:.1f}s for {args.epochs} epochs")
    if args.curves:
        write_curves(logs, args.curves)


if __name__ == "__main__":
    main()
