"""Synthetic two-class image sets with class-correlated colour statistics."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# mean RGB per class; per-pixel noise is added on top
CLASS_COLOURS = {
    "fire": (165.0, 105.0, 70.0),
    "nofire": (105.0, 125.0, 90.0),
}


def synthetic_images(n: int, label: int, size: int, rng: np.random.Generator,
                     noise: float = 35.0) -> np.ndarray:
    """(n, size, size, 3) uint8 images for class index ``label``."""
    mean = np.array(list(CLASS_COLOURS.values())[label])
    # a per-image brightness shift keeps the task from being a single-pixel lookup
    shift = rng.normal(0.0, 20.0, size=(n, 1, 1, 1))
    pix = mean + shift + rng.normal(0.0, noise, size=(n, size, size, 3))
    return np.clip(np.rint(pix), 0, 255).astype(np.uint8)


def make_dataset(root, counts: dict[str, int], size: int = 32, seed: int = 0) -> Path:
    """Write ``<root>/<split>/{fire,nofire}/*.png``; ``counts`` maps split -> images per class."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for split, n in counts.items():
        for label, name in enumerate(CLASS_COLOURS):
            d = root / split / name
            d.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(synthetic_images(n, label, size, rng)):
                Image.fromarray(img, "RGB").save(d / f"{name}_{i:04d}.png")
    return root
