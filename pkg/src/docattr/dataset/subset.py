"""Balanced small-subset selection over the 216 composite classes."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np

from docattr.core import NUM_COMPOSITE, encode_composite
from docattr.dataset.records import SPLITS, ComponentRecord, Manifest


@dataclass(frozen=True)
class Quotas:
    train: int = 400
    val: int = 100
    test: int = 150

    def __getitem__(self, split: str) -> int:
        return getattr(self, split)

    @property
    def total(self) -> int:
        return self.train + self.val + self.test

    def as_dict(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _ranked(records: list[ComponentRecord]) -> list[ComponentRecord]:
    # sorted() is stable, so equal foreground counts keep manifest order.
    return sorted(records, key=lambda r: -r.foreground_count)


def _proportional_cuts(n: int, quotas: Quotas) -> tuple[int, int, int]:
    if n >= quotas.total:
        return quotas.train, quotas.val, quotas.test
    n_train = int(np.floor(n * quotas.train / quotas.total + 0.5))
    n_val = int(np.floor(n * quotas.val / quotas.total + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def select_small_subset(manifest: Manifest, quotas: Quotas = Quotas(), seed: int = 0) -> Manifest:
    """Pick the most ink-heavy word and patch components of every composite class.

    When a class (or, for a pre-split manifest, a class within one split) has
    fewer components of one kind than the quota, ``min(c_word, c_patch)`` of
    *both* kinds are kept so the two instance types stay paired in number.

    If every record already carries a split, quotas apply per split and splits
    are left untouched. Otherwise up to ``quotas.total`` components per kind are
    chosen for the class and dealt into train/val/test in the quota proportions
    by a seeded shuffle. Shortfalls are listed in ``meta["shortfall"]``.
    """
    presplit = bool(manifest.records) and all(r.split is not None for r in manifest.records)
    groups: dict[tuple, dict[str, list[ComponentRecord]]] = defaultdict(lambda: {"word": [], "patch": []})
    for rec in manifest.records:
        if rec.labels is None:
            continue
        cid = encode_composite(rec.labels).id
        key = (cid, rec.split) if presplit else (cid,)
        groups[key][rec.kind].append(rec)

    rng = np.random.default_rng(seed)
    chosen: list[ComponentRecord] = []
    shortfall = []
    keys = [(cid, s) for cid in range(NUM_COMPOSITE) for s in SPLITS] if presplit else [
        (cid,) for cid in range(NUM_COMPOSITE)
    ]
    for key in keys:
        bucket = groups.get(key, {"word": [], "patch": []})
        c_word, c_patch = len(bucket["word"]), len(bucket["patch"])
        want = quotas[key[1]] if presplit else quotas.total
        n = min(c_word, c_patch, want)
        if n < want:
            entry = {"composite": key[0], "words": c_word, "patches": c_patch, "selected": n}
            if presplit:
                entry["split"] = key[1]
            shortfall.append(entry)
        if n == 0:
            continue
        for kind in ("word", "patch"):
            top = _ranked(bucket[kind])[:n]
            if presplit:
                chosen.extend(top)
                continue
            cuts = _proportional_cuts(n, quotas)
            labels = np.repeat(np.array(SPLITS), cuts)
            labels = labels[rng.permutation(n)]
            chosen.extend(replace(r, split=str(s)) for r, s in zip(top, labels))

    used_pages = {r.page_id for r in chosen}
    meta = dict(manifest.meta)
    meta["selection"] = {"quotas": quotas.as_dict(), "seed": seed, "per_split": presplit}
    meta["shortfall"] = shortfall
    return Manifest(
        records=chosen,
        pages=[p for p in manifest.pages if p.page_id in used_pages],
        meta=meta,
    )
