"""Image discovery and preprocessing.

Discovery order is the lexicographic sort of file names, nothing else:
no mtimes, no directory order, so every model extracted over the same
directory sees the same rows.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExtractionError
from .registry import PreprocessSpec

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp"}


class DecodeError(Exception):
    """One image failed to decode; the runner skips it with a log line."""


def discover_images(image_dir: str | Path) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise ExtractionError(f"image directory not found: {root}")
    files = sorted(
        (p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if not files:
        raise ExtractionError(f"no image files in {root}")
    return files


def load_and_preprocess(path: Path, spec: PreprocessSpec) -> np.ndarray:
    """Decode one image to a (3, crop, crop) float32 array."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            img = _resize_short_side(img, spec.resize)
            img = _center_crop(img, spec.crop)
            pixels = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DecodeError(f"{path.name}: {exc}") from exc
    chw = np.transpose(pixels, (2, 0, 1))
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(spec.std, dtype=np.float32).reshape(3, 1, 1)
    return (chw - mean) / std


def _resize_short_side(img: Image.Image, target: int) -> Image.Image:
    w, h = img.size
    if min(w, h) == target:
        return img
    if w <= h:
        new_w, new_h = target, max(target, round(h * target / w))
    else:
        new_w, new_h = max(target, round(w * target / h)), target
    return img.resize((new_w, new_h), Image.Resampling.BILINEAR)


def _center_crop(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    if w < size or h < size:
        raise DecodeError(f"image {w}x{h} smaller than crop {size}")
    left = (w - size) // 2
    top = (h - size) // 2
    return img.crop((left, top, left + size, top + size))
