"""Build torch modules from layer plans and run the three forward contracts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import torch
from torch import nn

from docattr.zoo.registry import ArchitectureSpec, Layer, architecture_spec


class ModelContractError(ValueError):
    """A model was called with inputs its architecture does not accept."""


@dataclass(frozen=True)
class ModelConfig:
    dropout: float = 0.5
    softmax_weights: bool = True
    seed: int = 0

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TaskOutputs:
    """Per-task logits, optionally with the instance weights and per-instance logits."""

    logits: dict[str, torch.Tensor]
    weights: Optional[dict[str, torch.Tensor]] = None
    word_logits: Optional[dict[str, torch.Tensor]] = None
    patch_logits: Optional[dict[str, torch.Tensor]] = None
    features: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, task: str) -> torch.Tensor:
        return self.logits[task]

    def probabilities(self) -> dict[str, torch.Tensor]:
        return {t: torch.softmax(v, dim=-1) for t, v in self.logits.items()}


def make_layer(desc: Layer, config: ModelConfig) -> nn.Module:
    kind = desc["type"]
    if kind == "fc":
        return nn.Linear(desc["in"], desc["out"])
    if kind == "bn":
        return nn.BatchNorm1d(desc["features"])
    if kind == "relu":
        return nn.ReLU()
    if kind == "dropout":
        rate = desc["rate"]
        return nn.Dropout(config.dropout if rate is None else rate)
    if kind == "conv1d":
        return nn.Conv1d(desc["in"], desc["out"], desc["kernel"], padding=desc["padding"])
    if kind == "maxpool":
        return nn.MaxPool1d(desc["kernel"])
    if kind == "adaptive_avg_pool":
        return nn.AdaptiveAvgPool1d(desc["length"])
    if kind == "flatten":
        return nn.Flatten()
    if kind == "unflatten":
        return nn.Unflatten(1, (desc["channels"], desc["length"]))
    raise ValueError(f"unknown layer type {kind!r}")


def make_sequential(layers: list[Layer], config: ModelConfig) -> nn.Sequential:
    return nn.Sequential(*(make_layer(d, config) for d in layers))


def describe_layer(module: nn.Module) -> Layer:
    """Inverse of :func:`make_layer`, used to cross-check built models against the catalog."""
    if isinstance(module, nn.Linear):
        return {"type": "fc", "in": module.in_features, "out": module.out_features}
    if isinstance(module, nn.BatchNorm1d):
        return {"type": "bn", "features": module.num_features}
    if isinstance(module, nn.ReLU):
        return {"type": "relu"}
    if isinstance(module, nn.Dropout):
        return {"type": "dropout", "rate": module.p}
    if isinstance(module, nn.Conv1d):
        return {
            "type": "conv1d",
            "in": module.in_channels,
            "out": module.out_channels,
            "kernel": module.kernel_size[0],
            "padding": module.padding[0],
        }
    if isinstance(module, nn.MaxPool1d):
        return {"type": "maxpool", "kernel": module.kernel_size}
    if isinstance(module, nn.AdaptiveAvgPool1d):
        return {"type": "adaptive_avg_pool", "length": module.output_size}
    if isinstance(module, nn.Flatten):
        return {"type": "flatten"}
    if isinstance(module, nn.Unflatten):
        channels, length = module.unflattened_size
        return {"type": "unflatten", "channels": channels, "length": length}
    raise ValueError(f"cannot describe {type(module).__name__}")


def init_parameters(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm1d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class ModelGraph(nn.Module):
    """A built architecture; wiring is chosen by ``spec.family``."""

    def __init__(self, spec: ArchitectureSpec, config: ModelConfig):
        super().__init__()
        self.spec = spec
        self.config = config
        seq = lambda layers: make_sequential(layers, config)  # noqa: E731
        mdict = lambda d: nn.ModuleDict({k: seq(v) for k, v in d.items()})  # noqa: E731
        self.trunks = mdict(spec.trunks)
        self.towers = nn.ModuleDict(
            {name: seq(spec.tower) for name in ("word", "patch")} if spec.tower else {}
        )
        if spec.family == "late_concat":
            self.instance_heads = nn.ModuleDict(
                {name: mdict(spec.instance_heads) for name in ("word", "patch")}
            )
        self.trunk = seq(spec.trunk) if spec.trunk else None
        if spec.family == "weighted":
            self.instance_heads = nn.ModuleDict({name: mdict(spec.heads) for name in ("word", "patch")})
            self.weight_heads = mdict(spec.weight_heads)
        else:
            self.heads = mdict(spec.heads)

    @property
    def arch_id(self) -> str:
        return self.spec.arch_id

    @property
    def tasks(self) -> tuple[str, ...]:
        return self.spec.tasks

    @property
    def instances(self) -> int:
        return self.spec.instances

    def theta_parameters(self) -> list[nn.Parameter]:
        psi = {id(p) for p in self.psi_parameters()}
        return [p for p in self.parameters() if id(p) not in psi]

    def psi_parameters(self) -> list[nn.Parameter]:
        if self.spec.family != "weighted":
            return []
        return list(self.weight_heads.parameters())

    # -- wiring ------------------------------------------------------------------

    def _single(self, emb: torch.Tensor) -> TaskOutputs:
        if "shared" in self.trunks:
            z = self.trunks["shared"](emb)
            return TaskOutputs({t: self.heads[t](z) for t in self.tasks})
        return TaskOutputs({t: self.heads[t](self.trunks[t](emb)) for t in self.tasks})

    def _late_concat(self, word: torch.Tensor, patch: torch.Tensor) -> TaskOutputs:
        zw = self.towers["word"](word)
        zp = self.towers["patch"](patch)
        logits, feats = {}, {}
        for t in self.tasks:
            a = self.instance_heads["word"][t](zw)
            b = self.instance_heads["patch"][t](zp)
            joined = torch.cat([a, b], dim=1)
            feats[t] = {"word": a, "patch": b, "concat": joined}
            logits[t] = self.heads[t](joined)
        return TaskOutputs(logits, features=feats)

    def _early_concat(self, word: torch.Tensor, patch: torch.Tensor) -> TaskOutputs:
        if self.spec.junction["type"] == "stack_channels":
            x = torch.stack([word, patch], dim=1)
        else:
            x = torch.cat([word, patch], dim=1)
        z = self.trunk(x)
        return TaskOutputs({t: self.heads[t](z) for t in self.tasks}, features={"junction": x})

    def instance_weights(self, joined: torch.Tensor) -> dict[str, torch.Tensor]:
        out = {}
        for t in self.tasks:
            raw = self.weight_heads[t](joined)
            out[t] = torch.softmax(raw, dim=1) if self.config.softmax_weights else raw
        return out

    def _weighted(self, word: torch.Tensor, patch: torch.Tensor) -> TaskOutputs:
        zw = self.towers["word"](word)
        zp = self.towers["patch"](patch)
        weights = self.instance_weights(torch.cat([zw, zp], dim=1))
        word_logits = {t: self.instance_heads["word"][t](zw) for t in self.tasks}
        patch_logits = {t: self.instance_heads["patch"][t](zp) for t in self.tasks}
        logits = {
            t: weighted_average(weights[t], word_logits[t], patch_logits[t]) for t in self.tasks
        }
        return TaskOutputs(
            logits,
            weights=weights,
            word_logits=word_logits,
            patch_logits=patch_logits,
            features={"word": zw, "patch": zp},
        )

    def forward(self, *inputs: torch.Tensor) -> TaskOutputs:
        if len(inputs) != self.instances:
            raise ModelContractError(
                f"{self.arch_id} takes {self.instances} instance input(s), got {len(inputs)}"
            )
        if self.instances == 2 and inputs[0].shape[0] != inputs[1].shape[0]:
            raise ModelContractError(
                f"word batch has {inputs[0].shape[0]} items but patch batch has {inputs[1].shape[0]}"
            )
        family = self.spec.family
        if family == "single":
            return self._single(inputs[0])
        if family == "late_concat":
            return self._late_concat(*inputs)
        if family == "early_concat":
            return self._early_concat(*inputs)
        return self._weighted(*inputs)


def weighted_average(w: torch.Tensor, word: torch.Tensor, patch: torch.Tensor) -> torch.Tensor:
    """Element-wise mean of the two weighted instance outputs: (w1*word + w2*patch) / 2."""
    return (w[:, 0:1] * word + w[:, 1:2] * patch) / 2


def build(arch: str, config: Optional[ModelConfig] = None) -> ModelGraph:
    """Instantiate ``arch`` with parameters drawn from ``config.seed`` (global RNG untouched)."""
    config = config or ModelConfig()
    spec = architecture_spec(arch)
    if not config.softmax_weights and not spec.has_weight_module:
        raise ModelContractError(
            f"{spec.arch_id} has no weight module; the no-softmax ablation does not apply"
        )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = ModelGraph(spec, config)
        init_parameters(model)
    return model


def forward_single(model: ModelGraph, emb: torch.Tensor) -> TaskOutputs:
    if model.spec.family != "single":
        raise ModelContractError(f"forward_single needs a single-instance model, got {model.arch_id}")
    return model(emb)


def forward_concat(model: ModelGraph, word_emb: torch.Tensor, patch_emb: torch.Tensor) -> TaskOutputs:
    if model.spec.family not in ("late_concat", "early_concat"):
        raise ModelContractError(f"forward_concat needs an MI_* model, got {model.arch_id}")
    return model(word_emb, patch_emb)


def forward_weighted(
    model: ModelGraph, word_emb: torch.Tensor, patch_emb: torch.Tensor
) -> tuple[TaskOutputs, dict[str, torch.Tensor]]:
    if model.spec.family != "weighted":
        raise ModelContractError(f"forward_weighted needs a WEIGHTED_* model, got {model.arch_id}")
    out = model(word_emb, patch_emb)
    return out, out.weights
