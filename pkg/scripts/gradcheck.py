"""Finite-difference report for every kernel and every tiny-ViT parameter tensor."""

import argparse

import numpy as np

from vitforge.gradcheck import KERNELS, kernel_gradient_error, model_gradient_errors
from vitforge.model import ViTConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--coords", type=int, default=20)
    args = ap.parse_args()
    for k in KERNELS:
        print(f"kernel {k:<11s} {kernel_gradient_error(k):.2e}")
    cfg = ViTConfig.tiny()
    for dtype, tol in ((np.float32, 1e-2), (np.float64, 1e-4)):
        worst = {}
        for seed in range(args.seeds):
            for name, err in model_gradient_errors(cfg, seed=seed, coords=args.coords, dtype=dtype).items():
                worst[name] = max(worst.get(name, 0.0), err)
        name = max(worst, key=worst.get)
        print(f"tiny ViT {np.dtype(dtype).name}: worst {worst[name]:.2e} ({name}); "
              f"limit {tol:g} -> {'ok' if worst[name] < tol else 'FAIL'}")


if __name__ == "__main__":
    main()
