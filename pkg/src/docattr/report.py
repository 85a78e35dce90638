"""Result tables in the published layout, and long-format training curves."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from docattr.core import DISPLAY_NAMES, TASK_NAMES
from docattr.trainer import MetricsLog

SPLIT_ORDER = ("train", "val", "test")
PAGE_ROW = "test (page)"


class ReportError(ValueError):
    pass


@dataclass
class RunResult:
    arch: str
    instance: str
    accuracy: dict[str, dict[str, float]]
    page_accuracy: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def tasks(self) -> tuple[str, ...]:
        seen = {t for acc in self.accuracy.values() for t in acc} | set(self.page_accuracy)
        return tuple(t for t in TASK_NAMES if t in seen)

    def to_json(self) -> dict:
        return {
            "arch": self.arch,
            "instance": self.instance,
            "accuracy": self.accuracy,
            "page_accuracy": self.page_accuracy,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RunResult":
        return cls(obj["arch"], obj["instance"], dict(obj["accuracy"]),
                   dict(obj.get("page_accuracy") or {}), dict(obj.get("meta") or {}))

    def validate(self) -> None:
        for split, acc in self.accuracy.items():
            for task, v in acc.items():
                if task not in TASK_NAMES:
                    raise ReportError(f"{self.arch}: unknown task {task!r}")
                if not 0.0 <= v <= 1.0:
                    raise ReportError(f"{self.arch}/{split}/{task}: accuracy {v} outside [0, 1]")


def _check_compatible(results: Sequence[RunResult]) -> None:
    if not results:
        raise ReportError("no results to tabulate")
    for r in results:
        r.validate()
    sets = {r.tasks for r in results}
    if len(sets) > 1:
        raise ReportError(f"results cover different task sets: {sorted(sets)}")


def _table_rows(results: Sequence[RunResult]) -> list[list[str]]:
    rows = []
    for r in sorted(results, key=lambda r: (r.arch, r.instance)):
        splits = [s for s in SPLIT_ORDER if s in r.accuracy]
        splits += sorted(s for s in r.accuracy if s not in SPLIT_ORDER)
        for split in splits:
            acc = r.accuracy[split]
            rows.append([r.arch, r.instance, split, *(_cell(acc.get(t)) for t in TASK_NAMES)])
        if r.page_accuracy:
            rows.append([r.arch, r.instance, PAGE_ROW, *(_cell(r.page_accuracy.get(t)) for t in TASK_NAMES)])
    return rows


def _cell(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


HEADER = ["Architecture", "Instance", "Split", *(DISPLAY_NAMES[t] for t in TASK_NAMES)]


def table_csv(results: Sequence[RunResult]) -> str:
    _check_compatible(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(_table_rows(results))
    return buf.getvalue()


def table_markdown(results: Sequence[RunResult]) -> str:
    """Markdown table; the arch and instance cells are blank on continuation rows of a group."""
    _check_compatible(results)
    lines = ["| " + " | ".join(HEADER) + " |", "|" + "---|" * len(HEADER)]
    prev = None
    for row in _table_rows(results):
        group = (row[0], row[1])
        shown = row if group != prev else ["", "", *row[2:]]
        prev = group
        lines.append("| " + " | ".join(shown) + " |")
    return "\n".join(lines) + "\n"


def emit_tables(results: Sequence[RunResult], fmt: str, out_dir: str | os.PathLike) -> list[Path]:
    """Write ``tables.csv`` and/or ``tables.md`` (``fmt`` is csv, markdown or both)."""
    if fmt not in ("csv", "markdown", "both"):
        raise ReportError(f"unknown table format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        written.append(out / "tables.csv")
        written[-1].write_text(table_csv(results), encoding="utf-8")
    if fmt in ("markdown", "both"):
        written.append(out / "tables.md")
        written[-1].write_text(table_markdown(results), encoding="utf-8")
    return written


def curves_csv(log: MetricsLog) -> str:
    """Long format ``epoch,split,task,accuracy``, one row per logged value."""
    if not log.rows:
        raise ReportError("metrics log has no epochs")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "split", "task", "accuracy"])
    for r in log.rows:
        for t in log.tasks:
            w.writerow([r.epoch, r.split, t, repr(float(r.accuracy[t]))])
    return buf.getvalue()


def export_curves(log: MetricsLog, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(curves_csv(log), encoding="utf-8")
    return path


def load_result(path: str | os.PathLike) -> RunResult:
    return RunResult.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
