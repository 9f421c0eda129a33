"""Vision Transformer (ViT-Base/16 layout) with a hand-written backward pass.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed with timm-style
names (``blocks.3.attn.qkv.weight`` ...).  Linear weights are stored
(out_features, in_features).  The patch projection weight is the stride-P
convolution kernel flattened in (channel, row, col) order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from vitforge.errors import ConfigError, DimensionError, NumericFault, StateError
from vitforge.tensor import (
    DTYPE,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    softmax,
    softmax_backward,
)

Params = dict  # name -> np.ndarray


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    in_channels: int = 3
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: int = 4
    num_classes: int = 2
    layer_norm_eps: float = 1e-6
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("image_size", "patch_size", "in_channels", "embed_dim", "depth",
                     "num_heads", "mlp_ratio", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ViTConfig.{name} must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.layer_norm_eps <= 0:
            raise ConfigError("layer_norm_eps must be positive")
        if self.dropout != 0.0:
            raise ConfigError("dropout is reserved and must be 0")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size ** 2

    @property
    def mlp_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        return cls(**d)

    @classmethod
    def base(cls, num_classes: int = 2) -> "ViTConfig":
        return cls(num_classes=num_classes)

    @classmethod
    def tiny(cls, num_classes: int = 2) -> "ViTConfig":
        return cls(image_size=32, patch_size=8, embed_dim=16, depth=2, num_heads=2,
                   mlp_ratio=4, num_classes=num_classes)

    @classmethod
    def named(cls, size: str, num_classes: int = 2) -> "ViTConfig":
        if size == "base":
            return cls.base(num_classes)
        if size == "tiny":
            return cls.tiny(num_classes)
        raise ConfigError(f"unknown model size {size!r}; expected 'base' or 'tiny'")


def param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.embed_dim, cfg.mlp_dim
    shapes = {
        "patch_embed.weight": (d, cfg.patch_dim),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.seq_len, d),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes.update({
            p + "norm1.weight": (d,),
            p + "norm1.bias": (d,),
            p + "attn.qkv.weight": (3 * d, d),
            p + "attn.qkv.bias": (3 * d,),
            p + "attn.proj.weight": (d, d),
            p + "attn.proj.bias": (d,),
            p + "norm2.weight": (d,),
            p + "norm2.bias": (d,),
            p + "mlp.fc1.weight": (h, d),
            p + "mlp.fc1.bias": (h,),
            p + "mlp.fc2.weight": (d, h),
            p + "mlp.fc2.bias": (d,),
        })
    shapes.update({
        "norm.weight": (d,),
        "norm.bias": (d,),
        "head.weight": (cfg.num_classes, d),
        "head.bias": (cfg.num_classes,),
    })
    return shapes


def param_count(cfg: ViTConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _trunc_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(DTYPE)


def init_params(cfg: ViTConfig, seed: int = 0) -> Params:
    """Truncated normal (std 0.02, cut at 2 std) weights and embeddings, zero biases, unit LN scales."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=DTYPE)
        elif "norm" in name:
            params[name] = np.ones(shape, dtype=DTYPE)
        else:
            params[name] = _trunc_normal(rng, shape)
    return params


def check_params(params: Params, cfg: ViTConfig) -> None:
    shapes = param_shapes(cfg)
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    if missing or extra:
        raise DimensionError(f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")


def cast_params(params: Params, dtype) -> Params:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def extract_patches(images: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """(B, C, H, W) -> (B, num_patches, C*P*P), patches in row-major grid order."""
    if images.ndim == 3:
        images = images[None]
    b, c, hgt, wid = images.shape
    if (c, hgt, wid) != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise DimensionError(
            f"expected images (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}), "
            f"got {images.shape}"
        )
    p, g = cfg.patch_size, cfg.grid
    x = images.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(b, g * g, c * p * p))


def patch_embed(images: np.ndarray, params: Params, cfg: ViTConfig) -> np.ndarray:
    return linear(extract_patches(images, cfg), params["patch_embed.weight"], params["patch_embed.bias"])


def _split_heads(qkv: np.ndarray, num_heads: int):
    b, s, three_d = qkv.shape
    hd = three_d // (3 * num_heads)
    x = qkv.reshape(b, s, 3, num_heads, hd).transpose(2, 0, 3, 1, 4)
    return x[0], x[1], x[2]


def attention(x: np.ndarray, params: Params, prefix: str, num_heads: int, cache: dict | None = None):
    """Multi-head self-attention over (B, S, D) or (S, D) input."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    d = x.shape[-1]
    if d % num_heads:
        raise DimensionError(f"embed dim {d} not divisible by {num_heads} heads")
    hd = d // num_heads
    scale = x.dtype.type(1.0 / np.sqrt(hd))
    qkv = linear(x, params[prefix + "qkv.weight"], params[prefix + "qkv.bias"])
    q, k, v = _split_heads(qkv, num_heads)
    probs = softmax(np.matmul(q, np.swapaxes(k, -1, -2)) * scale)
    o = np.matmul(probs, v)
    b, _, s, _ = o.shape
    o_cat = np.ascontiguousarray(o.transpose(0, 2, 1, 3).reshape(b, s, d))
    out = linear(o_cat, params[prefix + "proj.weight"], params[prefix + "proj.bias"])
    if cache is not None:
        cache.update(q=q, k=k, v=v, probs=probs, o_cat=o_cat)
    return out[0] if squeeze else out


def encoder_block(x: np.ndarray, params: Params, i: int, cfg: ViTConfig, cache: dict | None = None):
    """Pre-norm block: x + attn(ln1(x)), then + fc2(gelu(fc1(ln2(.))))."""
    p = f"blocks.{i}."
    eps = cfg.layer_norm_eps
    h1 = layer_norm(x, params[p + "norm1.weight"], params[p + "norm1.bias"], eps)
    x_mid = x + attention(h1, params, p + "attn.", cfg.num_heads, cache)
    h2 = layer_norm(x_mid, params[p + "norm2.weight"], params[p + "norm2.bias"], eps)
    f1 = linear(h2, params[p + "mlp.fc1.weight"], params[p + "mlp.fc1.bias"])
    g = gelu(f1)
    out = x_mid + linear(g, params[p + "mlp.fc2.weight"], params[p + "mlp.fc2.bias"])
    if cache is not None:
        cache.update(x_in=x, h1=h1, x_mid=x_mid, h2=h2, f1=f1, g=g)
    return out


@dataclass
class ForwardCache:
    """Activations retained by ``forward`` for one ``backward`` call."""

    config: ViTConfig
    patches: np.ndarray
    blocks: list[dict] = field(default_factory=list)
    cls_out: np.ndarray | None = None
    cls_norm: np.ndarray | None = None
    logits: np.ndarray | None = None

    def arrays(self):
        yield self.patches
        for blk in self.blocks:
            yield from blk.values()
        yield self.cls_out
        yield self.cls_norm
        yield self.logits

    def num_floats(self) -> int:
        return sum(a.size for a in self.arrays())


def forward(images: np.ndarray, params: Params, cfg: ViTConfig, keep_cache: bool = False):
    """Logits (B, num_classes); with ``keep_cache`` returns ``(logits, ForwardCache)``."""
    dtype = params["cls_token"].dtype
    images = np.asarray(images, dtype=dtype)
    patches = extract_patches(images, cfg)
    b = patches.shape[0]
    tokens = linear(patches, params["patch_embed.weight"], params["patch_embed.bias"])
    cls = np.broadcast_to(params["cls_token"], (b, 1, cfg.embed_dim))
    x = np.concatenate([cls, tokens], axis=1) + params["pos_embed"]
    cache = ForwardCache(cfg, patches) if keep_cache else None
    for i in range(cfg.depth):
        blk = {} if keep_cache else None
        x = encoder_block(x, params, i, cfg, blk)
        if not np.isfinite(x).all():
            raise NumericFault(f"non-finite activation in encoder block {i}")
        if keep_cache:
            cache.blocks.append(blk)
    # LN is row-wise, so normalizing only the class token equals normalizing all tokens then reading it
    cls_out = x[:, 0]
    cls_norm = layer_norm(cls_out, params["norm.weight"], params["norm.bias"], cfg.layer_norm_eps)
    logits = linear(cls_norm, params["head.weight"], params["head.bias"])
    if not np.isfinite(logits).all():
        raise NumericFault("non-finite logits")
    if not keep_cache:
        return logits
    cache.cls_out, cache.cls_norm, cache.logits = cls_out, cls_norm, logits
    return logits, cache


def activation_floats(cfg: ViTConfig, batch_size: int) -> int:
    """Number of activation values ``forward(keep_cache=True)`` retains for one batch."""
    s, d, h, m = cfg.seq_len, cfg.embed_dim, cfg.num_heads, cfg.mlp_dim
    per_block = 8 * s * d + h * s * s + 2 * s * m
    per_sample = cfg.num_patches * cfg.patch_dim + cfg.depth * per_block + 2 * d + cfg.num_classes
    return batch_size * per_sample


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _attention_backward(dout, blk, params, prefix, num_heads, grads):
    o_cat = blk["o_cat"]
    do_cat, grads[prefix + "proj.weight"], grads[prefix + "proj.bias"] = linear_backward(
        o_cat, params[prefix + "proj.weight"], dout)
    b, s, d = o_cat.shape
    hd = d // num_heads
    scale = o_cat.dtype.type(1.0 / np.sqrt(hd))
    do = do_cat.reshape(b, s, num_heads, hd).transpose(0, 2, 1, 3)
    q, k, v, probs = blk["q"], blk["k"], blk["v"], blk["probs"]
    dprobs = np.matmul(do, np.swapaxes(v, -1, -2))
    dv = np.matmul(np.swapaxes(probs, -1, -2), do)
    dscores = softmax_backward(probs, dprobs) * scale
    dq = np.matmul(dscores, k)
    dk = np.matmul(np.swapaxes(dscores, -1, -2), q)
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(b, s, 3 * d)
    dh, grads[prefix + "qkv.weight"], grads[prefix + "qkv.bias"] = linear_backward(
        blk["h1"], params[prefix + "qkv.weight"], dqkv)
    return dh


def _block_backward(dx, blk, params, i, cfg, grads):
    p = f"blocks.{i}."
    eps = cfg.layer_norm_eps
    dg, grads[p + "mlp.fc2.weight"], grads[p + "mlp.fc2.bias"] = linear_backward(
        blk["g"], params[p + "mlp.fc2.weight"], dx)
    df1 = gelu_backward(blk["f1"], dg)
    dh2, grads[p + "mlp.fc1.weight"], grads[p + "mlp.fc1.bias"] = linear_backward(
        blk["h2"], params[p + "mlp.fc1.weight"], df1)
    dmid, grads[p + "norm2.weight"], grads[p + "norm2.bias"] = layer_norm_backward(
        blk["x_mid"], params[p + "norm2.weight"], params[p + "norm2.bias"], eps, dh2)
    dx_mid = dx + dmid
    dh1 = _attention_backward(dx_mid, blk, params, p + "attn.", cfg.num_heads, grads)
    din, grads[p + "norm1.weight"], grads[p + "norm1.bias"] = layer_norm_backward(
        blk["x_in"], params[p + "norm1.weight"], params[p + "norm1.bias"], eps, dh1)
    return dx_mid + din


def backward(cache: ForwardCache | None, params: Params, dlogits: np.ndarray) -> Params:
    """Gradients of every parameter given d(loss)/d(logits)."""
    if cache is None or cache.logits is None:
        raise StateError("backward called without a matching forward cache")
    cfg = cache.config
    if dlogits.shape != cache.logits.shape:
        raise DimensionError(f"upstream grad {dlogits.shape} does not match logits {cache.logits.shape}")
    dlogits = np.asarray(dlogits, dtype=cache.logits.dtype)
    grads: Params = {}
    dnorm, grads["head.weight"], grads["head.bias"] = linear_backward(
        cache.cls_norm, params["head.weight"], dlogits)
    dcls, grads["norm.weight"], grads["norm.bias"] = layer_norm_backward(
        cache.cls_out, params["norm.weight"], params["norm.bias"], cfg.layer_norm_eps, dnorm)
    b = dlogits.shape[0]
    dx = np.zeros((b, cfg.seq_len, cfg.embed_dim), dtype=dlogits.dtype)
    dx[:, 0] = dcls
    for i in reversed(range(cfg.depth)):
        dx = _block_backward(dx, cache.blocks[i], params, i, cfg, grads)
    grads["pos_embed"] = dx.sum(axis=0)
    grads["cls_token"] = dx[:, 0].sum(axis=0)
    _, grads["patch_embed.weight"], grads["patch_embed.bias"] = linear_backward(
        cache.patches, params["patch_embed.weight"], dx[:, 1:])
    return {name: grads[name] for name in params}


class ViT:
    """Config + parameters with a single-slot activation cache, for the training loop."""

    def __init__(self, config: ViTConfig, params: Params | None = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        check_params(self.params, config)
        self._cache: ForwardCache | None = None

    def forward(self, images, keep_cache: bool = True):
        if keep_cache:
            logits, self._cache = forward(images, self.params, self.config, keep_cache=True)
            return logits
        return forward(images, self.params, self.config)

    __call__ = forward

    def backward(self, dlogits) -> Params:
        cache, self._cache = self._cache, None
        return backward(cache, self.params, dlogits)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())
