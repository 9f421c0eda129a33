"""Directory-per-class dataset ingestion and preprocessing.

Layout: ``<root>/<split>/<class_name>/*.{jpg,jpeg,png}``.  Class indices
follow the sorted directory names, so ``fire`` is 0 and ``nofire`` is 1.
"""

from __future__ import annotations

import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from vitforge.errors import ConfigError, DecodeError, DimensionError
from vitforge.rng import fisher_yates

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class NormalizationSpec:
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("normalization needs one mean and one std per RGB channel")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"normalization std must be positive, got {self.std}")


IMAGENET = NormalizationSpec()


@dataclass
class ImageRGB:
    height: int
    width: int
    pixels: np.ndarray  # uint8, (height, width, 3)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise DimensionError(
                f"pixel buffer {self.pixels.shape} does not match {self.height}x{self.width}x3"
            )

    @classmethod
    def from_array(cls, arr) -> "ImageRGB":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(arr.shape[0], arr.shape[1], arr)


@dataclass
class DatasetManifest:
    split: str
    entries: list[tuple[str, int]]
    class_names: list[str]
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.class_names}
        for _, label in self.entries:
            counts[self.class_names[label]] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "class_names": list(self.class_names),
            "entries": [{"path": p, "label": lbl} for p, lbl in self.entries],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        return cls(
            split=obj["split"],
            entries=[(e["path"], int(e["label"])) for e in obj["entries"]],
            class_names=list(obj["class_names"]),
            warnings=list(obj.get("warnings", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class Batch:
    images: np.ndarray  # float32 (B, 3, H, W)
    labels: np.ndarray  # int64 (B,)
    paths: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)


def scan_dataset(root, split: str) -> DatasetManifest:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise ConfigError(
            f"split directory {split_dir} not found; expected <root>/{split}/<class_name>/*.jpg"
        )
    class_names = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    if not class_names:
        raise ConfigError(f"{split_dir} has no class subdirectories")
    entries = []
    warnings = []
    for label, name in enumerate(class_names):
        files = sorted(
            str(p)
            for p in (split_dir / name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            msg = f"class directory {split_dir / name} contains no images"
            log.warning(msg)
            warnings.append(msg)
        entries.extend((f, label) for f in files)
    entries.sort(key=lambda e: e[0])
    return DatasetManifest(split, entries, class_names, warnings)


def decode_image(data: bytes, path: str = "<bytes>") -> ImageRGB:
    """Decode PNG/JPEG bytes to 8-bit RGB. Grayscale is replicated, alpha dropped."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG", "MPO"):
                raise DecodeError(path, f"unsupported format {im.format}")
            im.load()
            if im.mode != "RGB":
                if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                    arr = np.asarray(im, dtype=np.float64)
                    scale = 255.0 / 65535.0 if im.mode.startswith("I;16") else 1.0
                    gray = np.clip(np.floor(arr * scale + 0.5), 0, 255).astype(np.uint8)
                    return ImageRGB.from_array(np.repeat(gray[:, :, None], 3, axis=2))
                im = im.convert("RGB")
            return ImageRGB.from_array(np.asarray(im))
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(path, str(exc)) from exc


def load_image(path) -> ImageRGB:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(path, str(exc)) from exc
    return decode_image(data, str(path))


def _axis_weights(n_in: int, n_out: int):
    """Integer taps for one axis: source index pair and the weight of the upper tap, over 2*n_out.

    Half-pixel source coordinate (d + 0.5) * n_in / n_out - 0.5 == ((2d + 1) * n_in - n_out) / (2 * n_out).
    """
    den = 2 * n_out
    num = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
    num = np.clip(num, 0, (n_in - 1) * den)
    i0 = num // den
    frac = num - i0 * den
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac, den


def resize_bilinear(img: ImageRGB, out_h: int = 224, out_w: int = 224) -> ImageRGB:
    """Half-pixel-center bilinear resize, evaluated exactly in integers.

    Rounds to nearest with ties away from zero (values are non-negative, so ties go up).
    """
    src = img.pixels.astype(np.int64)
    y0, y1, fy, dy = _axis_weights(img.height, out_h)
    x0, x1, fx, dx = _axis_weights(img.width, out_w)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (dx - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (dx - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    num = top * (dy - fy) + bot * fy
    den = dx * dy
    out = (2 * num + den) // (2 * den)
    return ImageRGB(out_h, out_w, out.astype(np.uint8))


def normalize(scaled: np.ndarray, spec: NormalizationSpec = IMAGENET) -> np.ndarray:
    """(value - mean_c) / std_c on [0, 1]-scaled data with channels on the last axis."""
    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    return (np.asarray(scaled, dtype=np.float32) - mean) / std


def to_normalized_tensor(img: ImageRGB, spec: NormalizationSpec = IMAGENET, size: int = 224) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32: x/255, then per-channel normalize."""
    if img.height != size or img.width != size:
        raise DimensionError(f"expected a {size}x{size} image, got {img.height}x{img.width}")
    x = normalize(img.pixels.astype(np.float32) / np.float32(255.0), spec)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def denormalize(t: np.ndarray, spec: NormalizationSpec = IMAGENET) -> np.ndarray:
    """Inverse of the normalization step; returns (H, W, 3) values in [0, 1]."""
    mean = np.asarray(spec.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(spec.std, dtype=np.float32)[:, None, None]
    return (t * std + mean).transpose(1, 2, 0)


def preprocess(path, size: int = 224, spec: NormalizationSpec = IMAGENET) -> np.ndarray:
    img = load_image(path)
    if (img.height, img.width) != (size, size):
        img = resize_bilinear(img, size, size)
    return to_normalized_tensor(img, spec, size)


def worker_count() -> int:
    env = os.environ.get("VITFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"VITFORGE_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def epoch_order(n: int, shuffle: bool, seed: int, epoch: int) -> list[int]:
    if not shuffle:
        return list(range(n))
    return fisher_yates(n, seed ^ epoch)


def batch_iter(
    manifest: DatasetManifest,
    batch_size: int = 32,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
    size: int = 224,
    spec: NormalizationSpec = IMAGENET,
    on_error: str = "raise",
    workers: int | None = None,
) -> Iterator[Batch]:
    """Yield preprocessed batches for one epoch.

    ``on_error="skip"`` logs and drops undecodable files (training);
    ``"raise"`` propagates the DecodeError (evaluation).
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    order = epoch_order(len(manifest.entries), shuffle, seed, epoch)
    workers = worker_count() if workers is None else workers

    def load(idx):
        path, label = manifest.entries[idx]
        try:
            return preprocess(path, size, spec), label, path
        except DecodeError as exc:
            if on_error == "raise":
                raise
            log.warning("skipping %s", exc)
            return None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            # map() keeps submission order regardless of completion order
            loaded = [r for r in pool.map(load, chunk) if r is not None]
            if not loaded:
                continue
            images = np.stack([r[0] for r in loaded])
            labels = np.array([r[1] for r in loaded], dtype=np.int64)
            yield Batch(images, labels, [r[2] for r in loaded])


def index_batches(order: Sequence[int], batch_size: int) -> list[list[int]]:
    """The per-epoch index grouping used by batch_iter, without decoding anything."""
    return [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]
