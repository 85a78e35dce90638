import json

import pytest

from docattr.core import AttributeLabelSet, ValidationError
from docattr.dataset.records import (
    ComponentRecord,
    Manifest,
    PageRecord,
    assign_page_splits,
    read_manifest,
    write_manifest,
)

LAB = AttributeLabelSet(1, 0, 3, 2)


def sample_manifest():
    page = PageRecord("p1", "pages/p1.png", LAB, "train", ((1, 2, 30, 20),), 100, 80)
    recs = [
        ComponentRecord("p1-w0000", "p1", "word", (1, 2, 30, 20), LAB, "train", 12),
        ComponentRecord("p1-p0000", "p1", "patch", (0, 0, 224, 224), LAB, "train", 400),
    ]
    return Manifest(recs, [page], {"seed": 3})


def test_manifest_roundtrip(tmp_path):
    m = sample_manifest()
    path = tmp_path / "m.jsonl"
    write_manifest(m, path)
    back = read_manifest(path)
    assert back.records == m.records and back.pages == m.pages
    assert back.meta["seed"] == 3 and "tool_version" in back.meta


def test_manifest_line_format(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(sample_manifest(), path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert "meta" in lines[0] and "page" in lines[1]
    comp = lines[2]
    assert set(comp) == {"component_id", "page_id", "kind", "bbox", "labels", "split", "foreground_count"}
    assert comp["labels"] == {"font_type": "calibri", "font_size": "8", "font_emphasis": "bold_italic",
                              "scan_resolution": "600"}


def test_dangling_page_reference_rejected():
    m = sample_manifest()
    m.records.append(ComponentRecord("x", "nope", "word", (0, 0, 20, 20)))
    with pytest.raises(ValidationError):
        m.validate()


def test_duplicate_component_rejected():
    m = sample_manifest()
    m.records.append(m.records[0])
    with pytest.raises(ValidationError):
        m.validate()


def test_bbox_outside_page_rejected():
    with pytest.raises(ValidationError):
        PageRecord("p", "p.png", LAB, None, ((90, 0, 20, 20),), 100, 100)


def test_page_splits_are_70_10_20_and_order_free():
    ids = [f"page{i}" for i in range(200)]
    a = assign_page_splits(ids, seed=4)
    b = assign_page_splits(list(reversed(ids)), seed=4)
    assert a == b
    counts = {s: sum(v == s for v in a.values()) for s in ("train", "val", "test")}
    assert counts == {"train": 140, "val": 20, "test": 40}


def test_small_corpora_get_every_split():
    for n in range(3, 12):
        got = assign_page_splits([f"p{i}" for i in range(n)], seed=0)
        assert set(got.values()) == {"train", "val", "test"}
    assert set(assign_page_splits(["a", "b"], seed=0).values()) <= {"train", "val", "test"}
