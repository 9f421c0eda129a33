"""End-to-end gradient verification for the ViT."""

from __future__ import annotations

import zlib

import numpy as np

from vitforge.model import ViTConfig, backward, cast_params, forward, init_params
from vitforge.tensor import backward_of, finite_difference_check, gelu, layer_norm, linear, matmul, softmax
from vitforge.training import cross_entropy_loss

KERNELS = ("matmul", "softmax", "layer_norm", "gelu", "linear")


def random_case(kernel: str, rng: np.random.Generator) -> list:
    dims = rng.integers(1, 7, size=3)
    if kernel == "matmul":
        return [rng.standard_normal((dims[0], dims[1])), rng.standard_normal((dims[1], dims[2]))]
    if kernel == "linear":
        return [rng.standard_normal((dims[0], dims[1])), rng.standard_normal((dims[2], dims[1]))]
    if kernel == "layer_norm":
        d = max(2, dims[1])
        x = rng.standard_normal((dims[0], d))
        # near-constant rows make the central difference itself ill-conditioned
        while (x.std(axis=-1) < 0.1).any():
            x = rng.standard_normal((dims[0], d))
        return [x, rng.standard_normal(d), rng.standard_normal(d), 1e-6]
    return [rng.standard_normal((dims[0], dims[1]))]


def kernel_forward(kernel: str, inputs: list) -> np.ndarray:
    if kernel == "matmul":
        return matmul(inputs[0], inputs[1])
    if kernel == "linear":
        return linear(inputs[0], inputs[1])
    if kernel == "layer_norm":
        return layer_norm(*inputs)
    if kernel == "softmax":
        return softmax(inputs[0])
    if kernel == "gelu":
        return gelu(inputs[0])
    raise ValueError(f"unknown kernel {kernel!r}")


def kernel_gradient_error(kernel: str, cases: int = 20, h: float = 1e-4) -> float:
    """Worst relative error over ``cases`` random small float64 inputs, every tensor input checked.

    A random projection of the output makes each check a scalar function.
    """
    rng = np.random.default_rng(zlib.crc32(kernel.encode()))
    worst = 0.0
    for _ in range(cases):
        inputs = random_case(kernel, rng)
        w = rng.standard_normal(kernel_forward(kernel, inputs).shape)
        grads = backward_of(kernel, inputs, w)
        for slot, v in enumerate(inputs):
            if not isinstance(v, np.ndarray):
                continue

            def f(x, slot=slot):
                args = list(inputs)
                args[slot] = x
                return float((kernel_forward(kernel, args) * w).sum())

            worst = max(worst, finite_difference_check(f, v, grads[slot], h=h))
    return worst


def model_gradient_errors(cfg: ViTConfig, seed: int = 0, batch: int = 3, coords: int = 20,
                          dtype=np.float32, h: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter tensor over ``coords`` random coordinates.

    The analytic gradient is computed at ``dtype``; the central difference is
    always evaluated in float64 around the same point.
    """
    rng = np.random.default_rng(seed)
    params = cast_params(init_params(cfg, seed), dtype)
    # larger-than-init weights so every path carries signal
    for name, p in params.items():
        if name.endswith(".bias") or name in ("cls_token",):
            params[name] = (rng.standard_normal(p.shape) * 0.1).astype(dtype)
        elif "norm" not in name:
            params[name] = (p * 10).astype(dtype)
    images = rng.standard_normal((batch, cfg.in_channels, cfg.image_size, cfg.image_size)).astype(dtype)
    labels = rng.integers(0, cfg.num_classes, batch)

    logits, cache = forward(images, params, cfg, keep_cache=True)
    _, dlogits = cross_entropy_loss(logits, labels)
    grads = backward(cache, params, dlogits)

    ref = cast_params(params, np.float64)
    images64 = images.astype(np.float64)
    errors = {}
    for name, p in ref.items():
        def loss_at(v, name=name):
            trial = dict(ref)
            trial[name] = v
            return cross_entropy_loss(forward(images64, trial, cfg), labels)[0]

        pool = np.arange(p.size)
        if name.endswith("attn.qkv.bias"):
            # key bias shifts every score in a row equally; its gradient is identically zero
            d = cfg.embed_dim
            pool = np.concatenate([pool[:d], pool[2 * d:]])
        idx = rng.choice(pool, size=min(coords, pool.size), replace=False)
        errors[name] = finite_difference_check(loss_at, p, grads[name], h=h, indices=idx)
    return errors
