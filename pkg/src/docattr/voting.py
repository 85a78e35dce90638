"""Page-level decisions from component posteriors by averaging and taking the argmax."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from docattr.core import (
    PROB_TOLERANCE,
    TASK_NAMES,
    AttributeLabelSet,
    DegenerateInputError,
    ValidationError,
    task_spec,
)


class VotingContractError(ValueError):
    pass


@dataclass(frozen=True)
class PagePosterior:
    """Class posteriors of one page's components for one task, one row per component."""

    page_id: str
    task_id: str
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValidationError(f"page {self.page_id}: posterior matrix must be 2-D, got {m.shape}")
        if m.shape[0] == 0:
            raise DegenerateInputError(f"page {self.page_id} has no components to vote with")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValidationError(f"page {self.page_id}: posteriors must be finite and non-negative")
        bad = np.flatnonzero(np.abs(m.sum(axis=1) - 1) > PROB_TOLERANCE)
        if bad.size:
            raise ValidationError(f"page {self.page_id}: row {int(bad[0])} does not sum to 1")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PageDecision:
    page_id: str
    mean: dict[str, np.ndarray]
    chosen: dict[str, int]
    p_max: dict[str, float]


def mean_posterior(page: PagePosterior) -> np.ndarray:
    return page.matrix.mean(axis=0)


def argmax_lowest(v: np.ndarray) -> int:
    # np.argmax already returns the first maximal index; named so the tie rule is explicit.
    return int(np.argmax(v))


def classify_page(pages: PagePosterior | Sequence[PagePosterior]) -> PageDecision:
    """Decide every task present in ``pages`` (all for the same page id)."""
    pages = [pages] if isinstance(pages, PagePosterior) else list(pages)
    if not pages:
        raise DegenerateInputError("no posteriors to classify")
    page_id = pages[0].page_id
    mean, chosen, p_max = {}, {}, {}
    for p in pages:
        if p.page_id != page_id:
            raise VotingContractError(f"mixed pages in one decision: {page_id} and {p.page_id}")
        m = mean_posterior(p)
        k = argmax_lowest(m)
        mean[p.task_id], chosen[p.task_id], p_max[p.task_id] = m, k, float(m[k])
    return PageDecision(page_id, mean, chosen, p_max)


def page_level_accuracy(
    decisions: Iterable[PageDecision], truth: Mapping[str, AttributeLabelSet]
) -> dict[str, float]:
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    for d in decisions:
        if d.page_id not in truth:
            raise VotingContractError(f"no ground truth for page {d.page_id}")
        for task, k in d.chosen.items():
            total[task] = total.get(task, 0) + 1
            correct[task] = correct.get(task, 0) + int(k == truth[d.page_id][task])
    if not total:
        raise VotingContractError("no decisions to score")
    return {t: correct[t] / total[t] for t in TASK_NAMES if t in total}


def group_posteriors(
    page_ids: Sequence[str], probabilities: Mapping[str, np.ndarray]
) -> dict[str, list[PagePosterior]]:
    """Split stacked per-component probabilities into per-page posteriors, pages in first-seen order."""
    order: dict[str, list[int]] = {}
    for i, pid in enumerate(page_ids):
        order.setdefault(pid, []).append(i)
    return {
        pid: [PagePosterior(pid, task, np.asarray(probs)[rows]) for task, probs in probabilities.items()]
        for pid, rows in order.items()
    }


def vote(page_ids: Sequence[str], probabilities: Mapping[str, np.ndarray]) -> list[PageDecision]:
    return [classify_page(ps) for ps in group_posteriors(page_ids, probabilities).values()]


# -- CSV I/O ---------------------------------------------------------------------

def predictions_csv(
    keys: Sequence[str], page_ids: Sequence[str], probabilities: Mapping[str, np.ndarray]
) -> str:
    """``page_id,component_id,task,prob_0..prob_5``; tasks with fewer classes leave trailing cells empty."""
    width = max(task_spec(t).gamma for t in probabilities)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["page_id", "component_id", "task", *(f"prob_{k}" for k in range(width))])
    for i, (key, pid) in enumerate(zip(keys, page_ids)):
        for task, probs in probabilities.items():
            row = [repr(float(v)) for v in probs[i]]
            w.writerow([pid, key, task, *row, *([""] * (width - len(row)))])
    return buf.getvalue()


def read_predictions(path: str | os.PathLike) -> dict[str, list[PagePosterior]]:
    rows: dict[tuple[str, str], list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["page_id", "component_id", "task"]:
            raise VotingContractError(f"{path}: not a predictions file")
        for line in reader:
            if not line:
                continue
            pid, _, task = line[:3]
            gamma = task_spec(task).gamma
            rows.setdefault((pid, task), []).append([float(v) for v in line[3:3 + gamma]])
    out: dict[str, list[PagePosterior]] = {}
    for (pid, task), mat in rows.items():
        out.setdefault(pid, []).append(PagePosterior(pid, task, np.array(mat)))
    return out


def decisions_csv(decisions: Sequence[PageDecision]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["page_id", "task", "chosen_class", "p_max"])
    for d in decisions:
        for task in TASK_NAMES:
            if task in d.chosen:
                w.writerow([d.page_id, task, d.chosen[task], repr(d.p_max[task])])
    return buf.getvalue()


def write_text(path: str | os.PathLike, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
