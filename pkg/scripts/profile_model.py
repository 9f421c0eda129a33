"""Profile the tiny or base ViT on random input."""

import argparse

import numpy as np

from vitforge.data import Batch
from vitforge.model import ViT, ViTConfig
from vitforge.profiler import profile, render_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", choices=["tiny", "base"], default="tiny")
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--timed", type=int, default=10)
    args = ap.parse_args()
    cfg = ViTConfig.named(args.size)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch_size, 3, cfg.image_size, cfg.image_size)).astype(np.float32)
    batch = Batch(x, rng.integers(0, 2, args.batch_size))
    report = profile(ViT(cfg), [batch], timed=args.timed, batches_per_epoch=-(-1509 // args.batch_size))
    print(render_profile(report, header=True), end="")


if __name__ == "__main__":
    main()
