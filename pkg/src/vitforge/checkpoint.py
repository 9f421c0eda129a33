"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"VITF"                  magic
    u32                      format version (1)
    u64                      manifest length L
    L bytes                  UTF-8 JSON manifest, space-padded so the payload starts 64-byte aligned
    payload                  raw f32 tensors, each starting at a 64-byte aligned offset

Manifest keys: ``config``, ``train_config``, ``epoch``, ``rng_state``,
``class_names``, ``adam_step`` and ``tensors`` (a list of ``{name, shape,
dtype: "f32", byte_offset, byte_len}``, offsets relative to the payload).
Adam moments, when present, are stored as tensors named ``adam.m.<param>``
and ``adam.v.<param>``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vitforge.errors import FormatError

MAGIC = b"VITF"
VERSION = 1
ALIGN = 64
_HEADER = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    train_config: dict | None = None
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    class_names: list[str] = field(default_factory=list)
    adam_m: dict[str, np.ndarray] | None = None
    adam_v: dict[str, np.ndarray] | None = None
    adam_step: int = 0

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = list(self.params.items())
        if self.adam_m is not None:
            out += [(f"adam.m.{k}", v) for k, v in self.adam_m.items()]
            out += [(f"adam.v.{k}", v) for k, v in self.adam_v.items()]
        return out


def _pad(n: int) -> int:
    return (-n) % ALIGN


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in ckpt.tensors():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({
            "name": name,
            "shape": list(np.shape(arr)),
            "dtype": "f32",
            "byte_offset": offset,
            "byte_len": len(data),
        })
        blobs.append(data)
        blobs.append(b"\0" * _pad(len(data)))
        offset += len(data) + _pad(len(data))
    manifest = {
        "config": ckpt.config,
        "train_config": ckpt.train_config,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "class_names": ckpt.class_names,
        "adam_step": ckpt.adam_step,
        "tensors": entries,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    text += b" " * _pad(_HEADER.size + len(text))
    if blobs:
        blobs.pop()  # no padding after the last tensor: the file ends where the data ends
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + b"".join(blobs)


def from_bytes(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: header truncated ({len(buf)} bytes)")
    magic, version, mlen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}, expected {VERSION}")
    start = _HEADER.size + mlen
    if start > len(buf):
        raise FormatError(f"{source}: manifest length {mlen} runs past end of file")
    try:
        manifest = json.loads(buf[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{source}: manifest must be a JSON object")
    for key in ("config", "tensors"):
        if key not in manifest:
            raise FormatError(f"{source}: manifest missing required field {key!r}")
    payload = memoryview(buf)[start:]
    tensors = {}
    for t in manifest["tensors"]:
        try:
            tensors.update(_read_tensor(t, payload, source))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{source}: malformed tensor entry {t!r} ({exc})") from exc
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    m = {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")}
    return Checkpoint(
        config=manifest["config"],
        params=params,
        train_config=manifest.get("train_config"),
        epoch=manifest.get("epoch", 0),
        rng_state=manifest.get("rng_state", {}),
        class_names=manifest.get("class_names", []),
        adam_m=m or None,
        adam_v=v or None,
        adam_step=manifest.get("adam_step", 0),
    )


def _read_tensor(t: dict, payload: memoryview, source: str) -> dict[str, np.ndarray]:
    name = t["name"]
    if t.get("dtype") != "f32":
        raise FormatError(f"{source}: tensor {name}: dtype {t.get('dtype')!r} is not 'f32'")
    shape = tuple(int(s) for s in t["shape"])
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if t["byte_len"] != expected:
        raise FormatError(
            f"{source}: tensor {name}: byte_len {t['byte_len']} does not match shape {list(shape)}"
        )
    lo, hi = int(t["byte_offset"]), int(t["byte_offset"]) + expected
    if lo % ALIGN:
        raise FormatError(f"{source}: tensor {name}: byte_offset {lo} not {ALIGN}-byte aligned")
    if hi > len(payload):
        raise FormatError(f"{source}: tensor {name}: payload truncated (needs {hi}, have {len(payload)})")
    return {name: np.frombuffer(payload[lo:hi], dtype="<f4").astype(np.float32).reshape(shape)}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf, str(path))
