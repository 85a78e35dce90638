"""On-disk synthetic corpora: rendered pages, ground truth and component manifests."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from docattr.core import NUM_COMPOSITE, AttributeLabelSet, decode_composite
from docattr.dataset.extract import extract_words, tile_patches
from docattr.dataset.records import Manifest, PageRecord, assign_page_splits, resolve_image_path
from docattr.dataset.render import RenderConfig, render_synthetic_page

MANIFEST_NAME = "manifest.jsonl"


def corpus_labels(n_pages: int, seed: int) -> list[AttributeLabelSet]:
    """Labels for ``n_pages`` pages; each block of 216 pages covers every composite class once."""
    rng = np.random.default_rng(seed)
    out: list[AttributeLabelSet] = []
    while len(out) < n_pages:
        out.extend(decode_composite(int(c)) for c in rng.permutation(NUM_COMPOSITE))
    return out[:n_pages]


def render_corpus(
    out_dir: str | os.PathLike,
    n_pages: int,
    seed: int,
    labels: Optional[Iterable[AttributeLabelSet]] = None,
    split: bool = True,
) -> Manifest:
    """Render pages into ``out_dir/pages`` with ``.gt.json`` ground truth beside each PNG.

    Returns a page-only manifest (no components yet) with seeded page-level splits.
    """
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    labels = list(labels) if labels is not None else corpus_labels(n_pages, seed)
    page_ids = [f"synth-{seed}-{i:04d}" for i in range(len(labels))]
    splits = assign_page_splits(page_ids, seed) if split else {}
    pages = []
    for i, (pid, lab) in enumerate(zip(page_ids, labels)):
        page = render_synthetic_page(RenderConfig(lab), seed=seed * 100_003 + i, page_id=pid,
                                     split=splits.get(pid))
        Image.fromarray(page.image).save(out / page.record.image_path)
        gt_path = (out / page.record.image_path).with_suffix(".gt.json")
        gt_path.write_text(json.dumps(page.ground_truth(), indent=1, sort_keys=True) + "\n")
        pages.append(page.record)
    return Manifest(records=[], pages=pages, meta={"source": "render-synthetic", "seed": seed})


def load_page(page: PageRecord, manifest_path: str | os.PathLike) -> np.ndarray:
    with Image.open(resolve_image_path(page, manifest_path)) as im:
        return np.asarray(im.convert("RGB"))


def extract_corpus(manifest: Manifest, manifest_path: str | os.PathLike) -> tuple[Manifest, list]:
    """Word crops and patches for every page; returns the component manifest and rejected boxes."""
    records = []
    rejected_all = []
    for page in manifest.pages:
        image = load_page(page, manifest_path)
        rejected: list = []
        records.extend(rec for rec, _ in extract_words(image, page.word_bboxes, page, rejected))
        records.extend(rec for rec, _ in tile_patches(image, page))
        rejected_all.extend((page.page_id, *r) for r in rejected)
    meta = {**manifest.meta, "rejected_words": len(rejected_all)}
    return Manifest(records=records, pages=list(manifest.pages), meta=meta), rejected_all
