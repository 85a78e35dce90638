"""Label spaces, the task registry and the composite 216-class encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """An input violates a documented contract."""


class DegenerateInputError(ValueError):
    """An input is well-typed but carries no usable information."""


class TaskId(str, Enum):
    FONT_TYPE = "font_type"
    FONT_SIZE = "font_size"
    FONT_EMPHASIS = "font_emphasis"
    SCAN_RESOLUTION = "scan_resolution"


@dataclass(frozen=True)
class TaskSpec:
    task_id: TaskId
    class_names: tuple[str, ...]

    @property
    def gamma(self) -> int:
        return len(self.class_names)

    @property
    def name(self) -> str:
        return self.task_id.value

    def index(self, class_name: str) -> int:
        try:
            return self.class_names.index(str(class_name))
        except ValueError:
            raise ValidationError(
                f"{self.name}: unknown class {class_name!r}, expected one of {self.class_names}"
            ) from None


# Manifest spellings (lowercase snake case); display names live in DISPLAY_NAMES.
_TASKS: tuple[TaskSpec, ...] = (
    TaskSpec(
        TaskId.FONT_TYPE,
        ("arial", "calibri", "courier", "times_new_roman", "trebuchet", "verdana"),
    ),
    TaskSpec(TaskId.FONT_SIZE, ("8", "10", "12")),
    TaskSpec(TaskId.FONT_EMPHASIS, ("normal", "bold", "italic", "bold_italic")),
    TaskSpec(TaskId.SCAN_RESOLUTION, ("150", "300", "600")),
)

DISPLAY_NAMES = {
    TaskId.FONT_TYPE: "Font Type",
    TaskId.FONT_SIZE: "Font Size",
    TaskId.FONT_EMPHASIS: "Font Emphasis",
    TaskId.SCAN_RESOLUTION: "Scanning Resolution",
}

TASK_NAMES: tuple[str, ...] = tuple(t.name for t in _TASKS)
GAMMAS: tuple[int, ...] = tuple(t.gamma for t in _TASKS)
NUM_COMPOSITE = math.prod(GAMMAS)


def task_registry() -> list[TaskSpec]:
    """The four tasks in canonical (table column) order."""
    return list(_TASKS)


def task_spec(task: str | TaskId) -> TaskSpec:
    key = task.value if isinstance(task, TaskId) else str(task)
    for spec in _TASKS:
        if spec.name == key:
            return spec
    raise ValidationError(f"unknown task {task!r}; valid tasks: {TASK_NAMES}")


@dataclass(frozen=True)
class AttributeLabelSet:
    font_type: int
    font_size: int
    font_emphasis: int
    scan_resolution: int

    def __post_init__(self) -> None:
        for spec, value in zip(_TASKS, self.as_tuple()):
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValidationError(f"{spec.name}: label must be an integer, got {value!r}")
            if not 0 <= value < spec.gamma:
                raise ValidationError(
                    f"{spec.name}: label {value} outside [0, {spec.gamma})"
                )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.font_type, self.font_size, self.font_emphasis, self.scan_resolution)

    def __getitem__(self, task: str | TaskId) -> int:
        return getattr(self, task_spec(task).name)

    def to_names(self) -> dict[str, str]:
        return {s.name: s.class_names[v] for s, v in zip(_TASKS, self.as_tuple())}

    @classmethod
    def from_names(cls, names: dict[str, str]) -> "AttributeLabelSet":
        missing = [t for t in TASK_NAMES if t not in names]
        if missing:
            raise ValidationError(f"labels missing tasks: {missing}")
        return cls(*(s.index(names[s.name]) for s in _TASKS))


@dataclass(frozen=True)
class CompositeClassId:
    id: int

    def __post_init__(self) -> None:
        if not 0 <= self.id < NUM_COMPOSITE:
            raise ValidationError(f"composite id {self.id} outside [0, {NUM_COMPOSITE})")


def encode_composite(labels: AttributeLabelSet) -> CompositeClassId:
    """Mixed-radix index with scan resolution as the fastest digit."""
    code = 0
    for value, gamma in zip(labels.as_tuple(), GAMMAS):
        code = code * gamma + int(value)
    return CompositeClassId(code)


def decode_composite(cid: CompositeClassId | int) -> AttributeLabelSet:
    code = cid.id if isinstance(cid, CompositeClassId) else int(cid)
    if not 0 <= code < NUM_COMPOSITE:
        raise ValidationError(f"composite id {code} outside [0, {NUM_COMPOSITE})")
    digits = []
    for gamma in reversed(GAMMAS):
        code, digit = divmod(code, gamma)
        digits.append(digit)
    return AttributeLabelSet(*reversed(digits))


@dataclass(frozen=True)
class ClassProbabilities:
    task_id: TaskId
    values: tuple[float, ...]
    normalized: bool = False

    @property
    def gamma(self) -> int:
        return len(self.values)


PROB_TOLERANCE = 1e-6


def validate_probabilities(p: ClassProbabilities) -> ClassProbabilities:
    """Check non-negativity and rescale onto the simplex when the sum drifts."""
    spec = task_spec(p.task_id)
    values = np.asarray(p.values, dtype=np.float64)
    if values.shape != (spec.gamma,):
        raise ValidationError(
            f"{spec.name}: expected {spec.gamma} probabilities, got {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{spec.name}: non-finite probability")
    if np.any(values < 0):
        raise ValidationError(f"{spec.name}: negative probability in {values.tolist()}")
    total = values.sum()
    if total == 0:
        raise DegenerateInputError(f"{spec.name}: probabilities sum to zero")
    # Always divide: a sum within PROB_TOLERANCE is still pulled onto the simplex.
    values = values / total
    return ClassProbabilities(spec.task_id, tuple(float(v) for v in values), normalized=True)


def labels_matrix(labels: Iterable[AttributeLabelSet]) -> np.ndarray:
    """Stack label sets into an (n, 4) int64 array in task order."""
    rows: Sequence[tuple[int, ...]] = [lab.as_tuple() for lab in labels]
    return np.asarray(rows, dtype=np.int64).reshape(-1, len(_TASKS))
