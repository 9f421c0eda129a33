"""Cross-entropy loss, Adam, and the train/validate epoch loop."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from vitforge.checkpoint import Checkpoint, save_checkpoint
from vitforge.data import Batch, DatasetManifest, batch_iter
from vitforge.errors import ConfigError, DimensionError, LabelError, NumericFault
from vitforge.model import ViT
from vitforge.tensor import log_softmax

log = logging.getLogger(__name__)

EPOCH_LINE = "Epoch [{e}/{n}] -> Train Loss: {tl:.4f}, Train Acc: {ta:.2f}% | Val Loss: {vl:.4f}, Val Acc: {va:.2f}%"


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None
    save_best: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    def line(self, total: int) -> str:
        return format_epoch_line(self.epoch, total, self.train_loss, self.train_acc,
                                 self.val_loss, self.val_acc)


def format_epoch_line(epoch, total, train_loss, train_acc, val_loss, val_acc) -> str:
    return EPOCH_LINE.format(e=epoch, n=total, tl=train_loss, ta=train_acc, vl=val_loss, va=val_acc)


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy via log-sum-exp, plus d(loss)/d(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch of {b}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {int(labels[i])} at batch index {i} outside [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(b)
    loss = float(-logp[rows, labels].mean(dtype=np.float64))
    grad = np.exp(logp)
    grad[rows, labels] -= 1
    grad /= b
    return loss, grad


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    lr, eps = cfg.learning_rate, cfg.adam_eps
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if cfg.weight_decay > 0:
            p -= (lr * cfg.weight_decay) * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def run_epoch(model: ViT, batches: Iterable[Batch], state: AdamState | None = None,
              mode: str = "train", cfg: TrainConfig | None = None,
              on_logits: Callable | None = None) -> tuple[float, float]:
    """(sample-weighted mean loss, accuracy in percent) over ``batches``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and (state is None or cfg is None):
        raise ConfigError("train mode needs an AdamState and a TrainConfig")
    total_loss = 0.0
    correct = 0
    seen = 0
    for i, batch in enumerate(batches):
        try:
            logits = model.forward(batch.images, keep_cache=(mode == "train"))
            loss, dlogits = cross_entropy_loss(logits, batch.labels)
            if not np.isfinite(loss):
                raise NumericFault("non-finite loss")
            if mode == "train":
                adam_step(model.params, model.backward(dlogits), state, cfg)
        except NumericFault as exc:
            raise NumericFault(f"batch {i}: {exc}") from exc
        n = len(batch.labels)
        total_loss += loss * n
        correct += int((logits.argmax(axis=1) == batch.labels).sum())
        seen += n
        if on_logits is not None:
            on_logits(batch, logits)
    if seen == 0:
        raise ConfigError("epoch saw no samples")
    return total_loss / seen, 100.0 * correct / seen


def make_checkpoint(model: ViT, cfg: TrainConfig, state: AdamState | None, epoch: int,
                    class_names=()) -> Checkpoint:
    return Checkpoint(
        config=model.config.to_dict(),
        params=model.params,
        # output locations are not training state; leaving them out keeps checkpoints relocatable
        train_config={k: v for k, v in cfg.to_dict().items() if k not in ("checkpoint_path", "log_path")},
        epoch=epoch,
        rng_state={"seed": cfg.seed, "epoch": epoch},
        class_names=list(class_names),
        adam_m=state.m if state else None,
        adam_v=state.v if state else None,
        adam_step=state.t if state else 0,
    )


def fit(model: ViT, train: DatasetManifest, val: DatasetManifest, cfg: TrainConfig,
        out=None, state: AdamState | None = None, start_epoch: int = 0):
    """Train for ``cfg.epochs`` epochs; returns (list of EpochLog, final Checkpoint).

    Prints one ``EPOCH_LINE`` per epoch to ``out`` and appends the same
    record to ``cfg.log_path`` as JSON lines.
    """
    if not train.entries or not val.entries:
        raise ConfigError("train and val manifests must be non-empty")
    out = sys.stdout if out is None else out
    state = AdamState.zeros_like(model.params) if state is None else state
    size = model.config.image_size
    logs: list[EpochLog] = []
    jsonl = None
    if cfg.log_path:
        Path(cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
        jsonl = open(cfg.log_path, "w")
    best_acc = -1.0
    try:
        for e in range(start_epoch, cfg.epochs):
            tl, ta = run_epoch(
                model,
                batch_iter(train, cfg.batch_size, shuffle=True, seed=cfg.seed, epoch=e,
                           size=size, on_error="skip"),
                state, "train", cfg)
            vl, va = run_epoch(
                model,
                batch_iter(val, cfg.batch_size, shuffle=False, size=size, on_error="skip"),
                mode="eval")
            rec = EpochLog(e + 1, tl, ta, vl, va)
            logs.append(rec)
            print(rec.line(cfg.epochs), file=out, flush=True)
            if jsonl:
                jsonl.write(json.dumps(asdict(rec)) + "\n")
                jsonl.flush()
            if cfg.save_best and cfg.checkpoint_path and va > best_acc:
                best_acc = va
                save_checkpoint(make_checkpoint(model, cfg, state, e + 1, train.class_names),
                                best_path(cfg.checkpoint_path))
    finally:
        if jsonl:
            jsonl.close()
    ckpt = make_checkpoint(model, cfg, state, cfg.epochs, train.class_names)
    if cfg.checkpoint_path:
        save_checkpoint(ckpt, cfg.checkpoint_path)
    return logs, ckpt


def best_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".best" + p.suffix)


def write_curves(logs: list[EpochLog], path) -> None:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.val_loss!r},{r.val_acc!r}" for r in logs]
    Path(path).write_text("\n".join(lines) + "\n")
