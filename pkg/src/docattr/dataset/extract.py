"""Word-crop extraction and fixed-stride patch tiling."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from docattr.dataset.foreground import foreground_count
from docattr.dataset.records import (
    MIN_WORD_SIDE,
    PATCH_SIZE,
    BBox,
    ComponentRecord,
    PageRecord,
    bbox_inside,
)

PATCH_STRIDE = 112


def patch_offsets(length: int, window: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> list[int]:
    """Window origins along one axis; partial windows at the border are dropped."""
    if length < window:
        return []
    return list(range(0, length - window + 1, stride))


def patch_count(width: int, height: int) -> int:
    if width < PATCH_SIZE or height < PATCH_SIZE:
        return 0
    return ((width - PATCH_SIZE) // PATCH_STRIDE + 1) * ((height - PATCH_SIZE) // PATCH_STRIDE + 1)


def _component_fields(page: Optional[PageRecord]):
    if page is None:
        return "", None, None
    return page.page_id, page.labels, page.split


def extract_words(
    page_image: np.ndarray,
    bboxes: Sequence[BBox],
    page: Optional[PageRecord] = None,
    rejected: Optional[list] = None,
) -> list[tuple[ComponentRecord, np.ndarray]]:
    """Crop every bbox strictly larger than 15x15 pixels, in input order.

    Boxes that fall outside the image or fail the size filter are skipped; when
    ``rejected`` is given, ``(index, bbox, reason)`` tuples are appended to it.
    """
    height, width = page_image.shape[:2]
    page_id, labels, split = _component_fields(page)
    out = []
    for idx, bbox in enumerate(bboxes):
        x, y, w, h = (int(v) for v in bbox)
        if not bbox_inside((x, y, w, h), width, height):
            if rejected is not None:
                rejected.append((idx, (x, y, w, h), "outside image bounds"))
            continue
        if w <= MIN_WORD_SIDE or h <= MIN_WORD_SIDE:
            if rejected is not None:
                rejected.append((idx, (x, y, w, h), f"not larger than {MIN_WORD_SIDE}x{MIN_WORD_SIDE}"))
            continue
        crop = page_image[y:y + h, x:x + w]
        rec = ComponentRecord(
            component_id=f"{page_id}-w{idx:04d}",
            page_id=page_id,
            kind="word",
            bbox=(x, y, w, h),
            labels=labels,
            split=split,
            foreground_count=foreground_count(crop),
        )
        out.append((rec, crop))
    return out


def tile_patches(
    page_image: np.ndarray, page: Optional[PageRecord] = None
) -> list[tuple[ComponentRecord, np.ndarray]]:
    """All 224x224 windows at stride 112 that fit entirely inside the page, row-major."""
    height, width = page_image.shape[:2]
    page_id, labels, split = _component_fields(page)
    out = []
    idx = 0
    for y in patch_offsets(height):
        for x in patch_offsets(width):
            crop = page_image[y:y + PATCH_SIZE, x:x + PATCH_SIZE]
            rec = ComponentRecord(
                component_id=f"{page_id}-p{idx:04d}",
                page_id=page_id,
                kind="patch",
                bbox=(x, y, PATCH_SIZE, PATCH_SIZE),
                labels=labels,
                split=split,
                foreground_count=foreground_count(crop),
            )
            out.append((rec, crop))
            idx += 1
    return out
