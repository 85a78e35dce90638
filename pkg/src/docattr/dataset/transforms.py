"""Network-input normalization and Gaussian corruption."""

from __future__ import annotations

import math

import numpy as np
from PIL import Image

INPUT_SIZE = 224
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)
NOISE_STD = math.sqrt(0.1)


def _to_unit_rgb(crop: np.ndarray) -> np.ndarray:
    arr = np.asarray(crop)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"expected an HxW or HxWxC raster, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[..., :3]
    elif arr.shape[2] != 3:
        raise ValueError(f"unsupported channel count {arr.shape[2]}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32)


def fit_to_canvas(rgb: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Scale the longer side to ``size`` and center on a white canvas."""
    h, w = rgb.shape[:2]
    if h == 0 or w == 0:
        raise ValueError(f"zero-area crop ({w}x{h})")
    if (h, w) == (size, size):
        return rgb
    scale = size / max(h, w)
    nw = min(size, max(1, int(round(w * scale))))
    nh = min(size, max(1, int(round(h * scale))))
    canvas = np.ones((size, size, 3), dtype=np.float32)
    top, left = (size - nh) // 2, (size - nw) // 2
    for c in range(3):
        chan = Image.fromarray(np.ascontiguousarray(rgb[..., c], dtype=np.float32), mode="F")
        canvas[top:top + nh, left:left + nw, c] = np.asarray(
            chan.resize((nw, nh), Image.BILINEAR), dtype=np.float32
        )
    return canvas


def standardize(rgb: np.ndarray) -> np.ndarray:
    """HxWx3 values in [0, 1] -> 3xHxW standardized with the ImageNet statistics."""
    mean = np.asarray(MEAN, dtype=np.float32)
    std = np.asarray(STD, dtype=np.float32)
    return np.ascontiguousarray(((rgb - mean) / std).transpose(2, 0, 1), dtype=np.float32)


def normalize_image(crop: np.ndarray) -> np.ndarray:
    """Turn a crop into the 3x224x224 network input.

    uint8 rasters are mapped to [0, 1]; float rasters are assumed to already be
    there. Grayscale input is replicated across the three channels.
    """
    rgb = _to_unit_rgb(crop)
    return standardize(fit_to_canvas(rgb))


def resize_u8(crop: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """uint8 HxWx3 crop fitted onto the white canvas; compact storage form for training sets."""
    rgb = _to_unit_rgb(crop)
    fitted = fit_to_canvas(rgb, size)
    return np.clip(np.rint(fitted * 255.0), 0, 255).astype(np.uint8)


def add_gaussian_noise(image: np.ndarray, seed: int, std: float = NOISE_STD) -> np.ndarray:
    """Add i.i.d. N(0, std^2) noise drawn from a generator seeded with ``seed``."""
    image = np.asarray(image)
    if std == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, std, size=image.shape)
    return (image + noise).astype(image.dtype, copy=False)
