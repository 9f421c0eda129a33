"""Per-batch timing and an analytic memory account."""

from __future__ import annotations

import copy
import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from vitforge.data import Batch
from vitforge.errors import ConfigError
from vitforge.model import ViT, ViTConfig, activation_floats, param_count
from vitforge.training import AdamState, TrainConfig, adam_step, cross_entropy_loss

BYTES_PER_FLOAT = 4
MEMORY_NOTE = ("memory is an analytic account: (parameters + Adam moments + cached activations "
               "for one batch) x 4 bytes; not a process or device measurement")


def memory_bytes(cfg: ViTConfig, batch_size: int) -> int:
    n = param_count(cfg)
    return BYTES_PER_FLOAT * (n + 2 * n + activation_floats(cfg, batch_size))


@dataclass
class ProfileReport:
    forward_s_per_batch: float
    backward_s_per_batch: float
    train_s_per_epoch: float
    inference_s_per_batch: float
    memory_mb: float
    batch_size: int = 0
    batches_per_epoch: int = 0
    environment: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    note: str = MEMORY_NOTE

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ProfileReport":
        return cls(**d)


def environment_note(workers: int | None = None) -> dict:
    env = {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "threads": workers if workers is not None else os.environ.get("VITFORGE_THREADS", "default"),
    }
    try:
        from threadpoolctl import threadpool_info
        env["blas"] = [{"api": i.get("internal_api"), "threads": i.get("num_threads")}
                       for i in threadpool_info()]
    except ImportError:  # pragma: no cover
        pass
    return env


def profile(model: ViT, batches: Sequence[Batch], cfg: TrainConfig | None = None,
            timed: int = 10, warmup: int = 3, batches_per_epoch: int | None = None,
            clock: Callable[[], float] = time.perf_counter, workers: int | None = None) -> ProfileReport:
    """Median phase timings over ``timed`` batches after ``warmup`` untimed ones.

    ``batches`` is cycled if shorter than ``warmup + timed``.  Training steps
    run on a private copy of the parameters; the caller's model is untouched.
    Epoch time is the median train-step time times ``batches_per_epoch``
    (default: ``len(batches)``).
    """
    if not batches:
        raise ConfigError("profiling needs at least one batch")
    if timed < 1:
        raise ConfigError("profiling needs at least one timed batch")
    cfg = cfg or TrainConfig()
    work = ViT(model.config, copy.deepcopy(model.params))
    state = AdamState.zeros_like(work.params)
    fwd, bwd, step, infer = [], [], [], []
    for i in range(warmup + timed):
        batch = batches[i % len(batches)]
        t0 = clock()
        logits = work.forward(batch.images, keep_cache=True)
        t1 = clock()
        _, dlogits = cross_entropy_loss(logits, batch.labels)
        t2 = clock()
        grads = work.backward(dlogits)
        t3 = clock()
        adam_step(work.params, grads, state, cfg)
        t4 = clock()
        work.forward(batch.images, keep_cache=False)
        t5 = clock()
        if i >= warmup:
            fwd.append(t1 - t0)
            bwd.append(t3 - t2)
            step.append(t4 - t0)
            infer.append(t5 - t4)
    per_epoch = len(batches) if batches_per_epoch is None else batches_per_epoch
    bs = max(len(b) for b in batches)
    return ProfileReport(
        forward_s_per_batch=statistics.median(fwd),
        backward_s_per_batch=statistics.median(bwd),
        train_s_per_epoch=statistics.median(step) * per_epoch,
        inference_s_per_batch=statistics.median(infer),
        memory_mb=memory_bytes(model.config, bs) / 2 ** 20,
        batch_size=bs,
        batches_per_epoch=per_epoch,
        environment=environment_note(workers),
        samples={"forward": fwd, "backward": bwd, "train_step": step, "inference": infer},
    )


def render_profile(report: ProfileReport, header: bool = False) -> str:
    head = f"# {report.note}\n" if header else ""
    return head + (
        f"Memory Used: {report.memory_mb:.2f} MB\n"
        f"Forward Pass Time per Batch: {report.forward_s_per_batch:.6f} seconds\n"
        f"Backward Pass Time per Batch: {report.backward_s_per_batch:.6f} seconds\n"
        f"Training Time per Epoch: {report.train_s_per_epoch:.2f} seconds\n"
        f"Inference Time per Batch: {report.inference_s_per_batch:.6f} seconds\n"
    )


def profile_json(report: ProfileReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
