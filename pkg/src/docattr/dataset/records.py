"""Page/component records and the JSON-lines manifest format."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from docattr import __version__
from docattr.core import AttributeLabelSet, ValidationError

SPLITS = ("train", "val", "test")
KINDS = ("word", "patch")
PATCH_SIZE = 224
MIN_WORD_SIDE = 15

BBox = tuple[int, int, int, int]


@dataclass(frozen=True)
class PageRecord:
    page_id: str
    image_path: str
    labels: AttributeLabelSet
    split: Optional[str] = None
    word_bboxes: tuple[BBox, ...] = ()
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self) -> None:
        if self.split is not None and self.split not in SPLITS:
            raise ValidationError(f"page {self.page_id}: unknown split {self.split!r}")
        if self.width is not None and self.height is not None:
            for bbox in self.word_bboxes:
                if not bbox_inside(bbox, self.width, self.height):
                    raise ValidationError(f"page {self.page_id}: bbox {bbox} outside image")


@dataclass(frozen=True)
class ComponentRecord:
    component_id: str
    page_id: str
    kind: str
    bbox: BBox
    labels: Optional[AttributeLabelSet] = None
    split: Optional[str] = None
    foreground_count: int = 0

    def __post_init__(self) -> None:
        _, _, w, h = self.bbox
        if self.kind == "patch":
            if w != PATCH_SIZE or h != PATCH_SIZE:
                raise ValidationError(f"{self.component_id}: patch must be 224x224, got {w}x{h}")
        elif self.kind == "word":
            if w <= MIN_WORD_SIDE or h <= MIN_WORD_SIDE:
                raise ValidationError(f"{self.component_id}: word crop {w}x{h} not above 15x15")
        else:
            raise ValidationError(f"{self.component_id}: unknown kind {self.kind!r}")
        if self.split is not None and self.split not in SPLITS:
            raise ValidationError(f"{self.component_id}: unknown split {self.split!r}")
        if self.foreground_count < 0:
            raise ValidationError(f"{self.component_id}: negative foreground count")


@dataclass
class Manifest:
    records: list[ComponentRecord] = field(default_factory=list)
    pages: list[PageRecord] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        page_ids = {p.page_id for p in self.pages}
        if len(page_ids) != len(self.pages):
            raise ValidationError("duplicate page ids in manifest")
        seen: set[str] = set()
        for rec in self.records:
            if rec.component_id in seen:
                raise ValidationError(f"duplicate component id {rec.component_id}")
            seen.add(rec.component_id)
            if rec.page_id not in page_ids:
                raise ValidationError(f"{rec.component_id} references unknown page {rec.page_id}")

    def page(self, page_id: str) -> PageRecord:
        for p in self.pages:
            if p.page_id == page_id:
                return p
        raise KeyError(page_id)

    def page_map(self) -> dict[str, PageRecord]:
        return {p.page_id: p for p in self.pages}

    def select(self, kind: Optional[str] = None, split: Optional[str] = None) -> list[ComponentRecord]:
        return [
            r for r in self.records
            if (kind is None or r.kind == kind) and (split is None or r.split == split)
        ]


def bbox_inside(bbox: BBox, width: int, height: int) -> bool:
    x, y, w, h = bbox
    return x >= 0 and y >= 0 and w >= 0 and h >= 0 and x + w <= width and y + h <= height


def assign_page_splits(
    page_ids: Iterable[str], seed: int, fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> dict[str, str]:
    """Seeded page-level 70/10/20 split; pages are sorted first so input order is irrelevant.

    With three or more pages every split receives at least one page, taken from
    the train share, so tiny corpora still have something to validate and test on.
    """
    ids = sorted(page_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_val = max(n_val, 1)
        n_test = max(n - n_train - n_val, 1)
        n_train = n - n_val - n_test
    out = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            out[ids[idx]] = "train"
        elif rank < n_train + n_val:
            out[ids[idx]] = "val"
        else:
            out[ids[idx]] = "test"
    return out


def with_split(records: Iterable[ComponentRecord], splits: dict[str, str]) -> list[ComponentRecord]:
    return [replace(r, split=splits.get(r.page_id, r.split)) for r in records]


# -- serialization -----------------------------------------------------------

def _labels_to_json(labels: Optional[AttributeLabelSet]) -> Optional[dict[str, str]]:
    return None if labels is None else labels.to_names()


def _labels_from_json(obj: Optional[dict[str, str]]) -> Optional[AttributeLabelSet]:
    return None if obj is None else AttributeLabelSet.from_names(obj)


def component_to_json(rec: ComponentRecord) -> dict[str, Any]:
    return {
        "component_id": rec.component_id,
        "page_id": rec.page_id,
        "kind": rec.kind,
        "bbox": list(rec.bbox),
        "labels": _labels_to_json(rec.labels),
        "split": rec.split,
        "foreground_count": int(rec.foreground_count),
    }


def component_from_json(obj: dict[str, Any]) -> ComponentRecord:
    return ComponentRecord(
        component_id=obj["component_id"],
        page_id=obj["page_id"],
        kind=obj["kind"],
        bbox=tuple(int(v) for v in obj["bbox"]),
        labels=_labels_from_json(obj.get("labels")),
        split=obj.get("split"),
        foreground_count=int(obj.get("foreground_count", 0)),
    )


def page_to_json(page: PageRecord) -> dict[str, Any]:
    return {
        "page_id": page.page_id,
        "image_path": page.image_path,
        "labels": _labels_to_json(page.labels),
        "split": page.split,
        "word_bboxes": [list(b) for b in page.word_bboxes],
        "width": page.width,
        "height": page.height,
    }


def page_from_json(obj: dict[str, Any]) -> PageRecord:
    return PageRecord(
        page_id=obj["page_id"],
        image_path=obj["image_path"],
        labels=AttributeLabelSet.from_names(obj["labels"]),
        split=obj.get("split"),
        word_bboxes=tuple(tuple(int(v) for v in b) for b in obj.get("word_bboxes", [])),
        width=obj.get("width"),
        height=obj.get("height"),
    )


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    """Header line carries meta; then one line per page, then one per component.

    Page image paths are stored relative to the manifest directory when possible.
    """
    manifest.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"tool_version": __version__, **manifest.meta}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for page in manifest.pages:
            fh.write(json.dumps({"page": page_to_json(page)}, sort_keys=True) + "\n")
        for rec in manifest.records:
            fh.write(json.dumps(component_to_json(rec), sort_keys=True) + "\n")


def read_manifest(path: str | os.PathLike) -> Manifest:
    manifest = Manifest()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if "meta" in obj:
                manifest.meta = dict(obj["meta"])
            elif "page" in obj:
                manifest.pages.append(page_from_json(obj["page"]))
            else:
                manifest.records.append(component_from_json(obj))
    manifest.validate()
    return manifest


def resolve_image_path(page: PageRecord, manifest_path: str | os.PathLike) -> Path:
    p = Path(page.image_path)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p
