"""Declarative layer plans for every architecture variant.

Each plan is plain data (lists of layer descriptors) so it can be dumped as the
``architectures.json`` catalog and cross-checked against built modules. A
descriptor may carry ``shape``: the declared per-sample output shape after
that layer, verified by shape propagation.

Heads always emit logits; softmax is applied once, in the loss or at inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Optional

from docattr.core import TASK_NAMES, task_spec
from docattr.backbone import EMBED_DIM

Layer = dict[str, Any]


class RegistryError(KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0])


class ArchitectureId(str, Enum):
    STL_HEAD = "stl_head"
    MTL_FC = "mtl_fc"
    MI_LATE_CONCAT_FC = "mi_late_concat_fc"
    MI_EARLY_CONCAT_FC = "mi_early_concat_fc"
    MI_EARLY_LESS_FC_1 = "mi_early_less_fc_1"
    MI_EARLY_LESS_FC_2 = "mi_early_less_fc_2"
    MI_EARLY_ALEXNET_1D = "mi_early_alexnet_1d"
    MI_EARLY_VGGNET_1D = "mi_early_vggnet_1d"
    WEIGHTED_FC = "weighted_fc"
    WEIGHTED_ALEXNET_1D = "weighted_alexnet_1d"
    STL_SINGLE_TASK = "stl_single_task"


# -- descriptor constructors ---------------------------------------------------

def fc(n_in: int, n_out: int) -> Layer:
    return {"type": "fc", "in": n_in, "out": n_out}


def bn(n: int) -> Layer:
    return {"type": "bn", "features": n}


def relu() -> Layer:
    return {"type": "relu"}


def dropout(rate: Optional[float] = None) -> Layer:
    # rate None -> the model config's dropout rate
    return {"type": "dropout", "rate": rate}


def conv(c_in: int, c_out: int, k: int, padding: int = 0) -> Layer:
    return {"type": "conv1d", "in": c_in, "out": c_out, "kernel": k, "padding": padding}


def maxpool(k: int) -> Layer:
    return {"type": "maxpool", "kernel": k}


def adaptive_pool(length: int) -> Layer:
    return {"type": "adaptive_avg_pool", "length": length}


def flatten() -> Layer:
    return {"type": "flatten"}


def unflatten(channels: int, length: int) -> Layer:
    return {"type": "unflatten", "channels": channels, "length": length}


def shaped(layer: Layer, *shape: int) -> Layer:
    return {**layer, "shape": list(shape)}


def fc_relu_bn(n_in: int, n_out: int) -> list[Layer]:
    return [fc(n_in, n_out), relu(), bn(n_out)]


def ladder(widths: list[int]) -> list[Layer]:
    out: list[Layer] = []
    for a, b in zip(widths, widths[1:]):
        out += fc_relu_bn(a, b)
    return out


def head(n_in: int, task: str) -> list[Layer]:
    return [fc(n_in, task_spec(task).gamma)]


# -- plans -------------------------------------------------------------------------

# FC 2048->512, FC 512->256, BN, FC 256->256, BN (no activations are specified).
BASE_TRUNK: list[Layer] = [fc(EMBED_DIM, 512), fc(512, 256), bn(256), fc(256, 256), bn(256)]

ALEXNET_PLAN = [(64, 11), (192, 5), (384, 3), (256, 3), (256, 3)]


def alexnet_blocks(c_in: int, length: int) -> list[Layer]:
    layers: list[Layer] = []
    for c_out, k in ALEXNET_PLAN:
        length = length - k + 1
        layers += [conv(c_in, c_out, k), bn(c_out), shaped(relu(), c_out, length)]
        c_in = c_out
    return layers


def vggnet_blocks(c_in: int, length: int) -> list[Layer]:
    plan = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)]
    layers: list[Layer] = []
    for c_out, n_conv in plan:
        for _ in range(n_conv):
            layers += [conv(c_in, c_out, 3, padding=1), relu()]
            c_in = c_out
        length //= 2
        layers.append(shaped(maxpool(2), c_out, length))
    return layers


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer plan for one architecture.

    ``family`` selects the forward wiring:

    * ``single``: ``trunks[t]`` then ``heads[t]`` (a single shared trunk under key ``"shared"`` for MTL).
    * ``late_concat``: per-instance ``tower`` and ``instance_heads[t]``, concat, then ``heads[t]``.
    * ``early_concat``: word/patch embeddings joined at the input (``junction``), ``trunk``, ``heads[t]``.
    * ``weighted``: per-instance ``tower`` and ``heads[t]``; ``weight_heads[t]`` on the joined tower
      outputs give the instance weights.
    """

    arch_id: str
    family: str
    instances: int
    tasks: tuple[str, ...]
    label: str
    trunks: dict[str, list[Layer]] = field(default_factory=dict)
    tower: list[Layer] = field(default_factory=list)
    instance_heads: dict[str, list[Layer]] = field(default_factory=dict)
    trunk: list[Layer] = field(default_factory=list)
    heads: dict[str, list[Layer]] = field(default_factory=dict)
    weight_heads: dict[str, list[Layer]] = field(default_factory=dict)
    junction: dict[str, Any] = field(default_factory=dict)

    @property
    def has_weight_module(self) -> bool:
        return bool(self.weight_heads)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "arch_id": self.arch_id,
            "family": self.family,
            "instances": self.instances,
            "label": self.label,
            "tasks": list(self.tasks),
        }
        for name in ("trunks", "tower", "instance_heads", "trunk", "heads", "weight_heads", "junction"):
            value = getattr(self, name)
            if value:
                out[name] = value
        out["output_dims"] = {t: task_spec(t).gamma for t in self.tasks}
        return out


def _stl_single(task: str) -> ArchitectureSpec:
    return ArchitectureSpec(
        arch_id=f"{ArchitectureId.STL_SINGLE_TASK.value}:{task}",
        family="single",
        instances=1,
        tasks=(task,),
        label=f"STL {task}",
        trunks={task: list(BASE_TRUNK)},
        heads={task: head(256, task)},
    )


def _plans() -> dict[str, ArchitectureSpec]:
    tasks = TASK_NAMES
    plans: dict[str, ArchitectureSpec] = {}

    plans["stl_head"] = ArchitectureSpec(
        arch_id="stl_head",
        family="single",
        instances=1,
        tasks=tasks,
        label="STL",
        trunks={t: list(BASE_TRUNK) for t in tasks},
        heads={t: head(256, t) for t in tasks},
    )
    plans["mtl_fc"] = ArchitectureSpec(
        arch_id="mtl_fc",
        family="single",
        instances=1,
        tasks=tasks,
        label="MTL multiple FC layers",
        trunks={"shared": list(BASE_TRUNK)},
        heads={t: head(256, t) for t in tasks},
    )
    plans["mi_late_concat_fc"] = ArchitectureSpec(
        arch_id="mi_late_concat_fc",
        family="late_concat",
        instances=2,
        tasks=tasks,
        label="Late concat multiple FC layers",
        tower=BASE_TRUNK + [fc(256, 256)],
        instance_heads={t: [fc(256, 256), relu(), bn(256)] for t in tasks},
        junction={"type": "concat", "width": 512},
        heads={
            t: [fc(512, 512), fc(512, 256), relu(), bn(256), dropout(), fc(256, task_spec(t).gamma)]
            for t in tasks
        },
    )
    early_ladder = [2 * EMBED_DIM, 2048, 1024, 512, 256, 128, 64, 32, 16]
    for arch_id, widths, label in (
        ("mi_early_concat_fc", early_ladder, "Early concat multiple FC layers"),
        ("mi_early_less_fc_1", early_ladder[:2], "Early concat less FC layers_1"),
        ("mi_early_less_fc_2", early_ladder[:3], "Early concat less FC layers_2"),
    ):
        plans[arch_id] = ArchitectureSpec(
            arch_id=arch_id,
            family="early_concat",
            instances=2,
            tasks=tasks,
            label=label,
            junction={"type": "concat", "width": 2 * EMBED_DIM},
            trunk=ladder(widths),
            heads={t: head(widths[-1], t) for t in tasks},
        )
    plans["mi_early_alexnet_1d"] = ArchitectureSpec(
        arch_id="mi_early_alexnet_1d",
        family="early_concat",
        instances=2,
        tasks=tasks,
        label="Early concat AlexNet like Conv. layers",
        junction={"type": "stack_channels", "channels": 2, "length": EMBED_DIM},
        trunk=alexnet_blocks(2, EMBED_DIM)
        + [shaped(adaptive_pool(6), 256, 6), shaped(flatten(), 1536), shaped(fc(1536, 192), 192)],
        heads={t: head(192, t) for t in tasks},
    )
    plans["mi_early_vggnet_1d"] = ArchitectureSpec(
        arch_id="mi_early_vggnet_1d",
        family="early_concat",
        instances=2,
        tasks=tasks,
        label="Early concat VggNet like Conv. layers",
        junction={"type": "stack_channels", "channels": 2, "length": EMBED_DIM},
        trunk=vggnet_blocks(2, EMBED_DIM)
        + [
            shaped(adaptive_pool(6), 512, 6),
            shaped(flatten(), 3072),
            dropout(),
            fc(3072, 768),
            relu(),
            dropout(),
            fc(768, 384),
            relu(),
            shaped(fc(384, 192), 192),
        ],
        heads={t: head(192, t) for t in tasks},
    )
    plans["weighted_fc"] = ArchitectureSpec(
        arch_id="weighted_fc",
        family="weighted",
        instances=2,
        tasks=tasks,
        label="Weighted late concat multiple FC layers",
        tower=[fc(EMBED_DIM, 512)] + ladder([512, 256, 128, 64, 32, 16]),
        heads={t: head(16, t) for t in tasks},
        junction={"type": "concat", "width": 32},
        weight_heads={t: fc_relu_bn(32, 16) + [fc(16, 2)] for t in tasks},
    )
    plans["weighted_alexnet_1d"] = ArchitectureSpec(
        arch_id="weighted_alexnet_1d",
        family="weighted",
        instances=2,
        tasks=tasks,
        label="Weighted late concat AlexNet like Conv. layers",
        tower=[fc(EMBED_DIM, 512), shaped(unflatten(1, 512), 1, 512)]
        + alexnet_blocks(1, 512)
        + [
            shaped(adaptive_pool(124), 256, 124),
            shaped(adaptive_pool(6), 256, 6),
            shaped(flatten(), 1536),
            dropout(0.5),
            fc(1536, 768),
            relu(),
            dropout(0.5),
            fc(768, 384),
            relu(),
            shaped(fc(384, 192), 192),
        ],
        heads={t: head(192, t) for t in tasks},
        junction={"type": "concat", "width": 384},
        weight_heads={
            t: [fc(384, 192), relu(), fc(192, 96), relu(), fc(96, 48), relu(), fc(48, 24), relu(), fc(24, 2), relu()]
            for t in tasks
        },
    )
    for t in tasks:
        spec = _stl_single(t)
        plans[spec.arch_id] = spec
    return plans


_PLANS = _plans()

REGISTRY_IDS: tuple[str, ...] = tuple(a.value for a in ArchitectureId)


def parse_arch(arch: str | ArchitectureId) -> str:
    """Normalize an architecture name; ``stl_single_task`` takes a ``:<task>`` suffix."""
    key = arch.value if isinstance(arch, ArchitectureId) else str(arch).strip().lower()
    if key == ArchitectureId.STL_SINGLE_TASK.value:
        raise RegistryError(f"{key} needs a task suffix, e.g. '{key}:font_size'")
    if key not in _PLANS:
        valid = [a for a in REGISTRY_IDS if a != "stl_single_task"] + [
            f"stl_single_task:{t}" for t in TASK_NAMES
        ]
        raise RegistryError(f"unknown architecture {arch!r}; valid ids: {valid}")
    return key


def architecture_spec(arch: str | ArchitectureId) -> ArchitectureSpec:
    return _PLANS[parse_arch(arch)]


def all_architectures() -> list[str]:
    return list(_PLANS)


def catalog() -> dict[str, Any]:
    return {"version": 1, "architectures": {k: v.to_json() for k, v in _PLANS.items()}}


def catalog_json() -> str:
    return json.dumps(catalog(), indent=1, sort_keys=True) + "\n"


def load_shipped_catalog() -> dict[str, Any]:
    text = resources.files("docattr.zoo").joinpath("architectures.json").read_text(encoding="utf-8")
    return json.loads(text)
