"""Otsu binarization and foreground-mass ranking of component images."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def to_gray_u8(image: np.ndarray) -> np.ndarray:
    """Luma conversion (ITU-R 601) to uint8; float input is taken to lie in [0, 1]."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            return arr[..., 0]
        rgb = arr[..., :3].astype(np.float64)
        gray = rgb @ np.array([0.299, 0.587, 0.114])
        return np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D or 3-D raster, got shape {arr.shape}")
    return arr


def otsu_threshold(gray: np.ndarray) -> int | None:
    """Otsu level on a 256-bin histogram.

    Returns the last gray level of the dark class, or ``None`` when the image
    holds a single intensity and no split exists.
    """
    hist = np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (mt - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def foreground_count(image: np.ndarray) -> int:
    """Number of ink pixels: gray levels at or below the Otsu level."""
    gray = to_gray_u8(image)
    t = otsu_threshold(gray)
    if t is None:
        return 0
    return int(np.count_nonzero(gray <= t))


def rank_by_foreground(images: Sequence[np.ndarray]) -> list[int]:
    """Indices sorted by foreground count, largest first; ties keep input order."""
    counts = [foreground_count(img) for img in images]
    return sorted(range(len(counts)), key=lambda i: -counts[i])
