"""Cross-entropy over task heads: single-task, multi-task, concat and dynamically weighted."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from docattr.core import TASK_NAMES, AttributeLabelSet, ValidationError, labels_matrix
from docattr.zoo.models import TaskOutputs


class LossContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    per_task: dict[str, torch.Tensor]
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        out = {t: float(v.detach()) for t, v in self.per_task.items()}
        out["total"] = float(self.total.detach())
        return out


def log_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Max-shifted log-softmax over the last axis."""
    shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
    return shifted - torch.log(torch.exp(shifted).sum(dim=-1, keepdim=True))


def cross_entropy(logits: torch.Tensor, label: int | torch.Tensor) -> torch.Tensor:
    """-log softmax(logits)[label]; batched input is reduced by the batch mean.

    ``logits`` is ``(K,)`` with an integer label, or ``(B, K)`` with ``B`` labels.
    """
    logits = torch.as_tensor(logits)
    if logits.shape[-1] < 2:
        raise LossContractError(f"need at least 2 classes, got {logits.shape[-1]}")
    if not torch.all(torch.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    single = logits.dim() == 1
    batch = logits.unsqueeze(0) if single else logits
    labels = torch.as_tensor(label, dtype=torch.long, device=batch.device).reshape(-1)
    if labels.shape[0] != batch.shape[0]:
        raise LossContractError(f"{batch.shape[0]} logit rows but {labels.shape[0]} labels")
    k = batch.shape[-1]
    if torch.any(labels < 0) or torch.any(labels >= k):
        raise LossContractError(f"label outside [0, {k}): {labels.tolist()}")
    picked = log_softmax(batch).gather(1, labels[:, None]).squeeze(1)
    return -picked.mean()


def cross_entropy_grad(logits: torch.Tensor, label: int) -> torch.Tensor:
    """Closed-form d/dlogits of :func:`cross_entropy` for one ``(K,)`` vector."""
    p = torch.exp(log_softmax(torch.as_tensor(logits)))
    onehot = torch.zeros_like(p)
    onehot[int(label)] = 1
    return p - onehot


def _label_tensor(labels, n_tasks: int) -> torch.Tensor:
    if isinstance(labels, AttributeLabelSet):
        arr = labels_matrix([labels])
    elif isinstance(labels, torch.Tensor):
        return labels.long().reshape(-1, n_tasks)
    elif isinstance(labels, Sequence) and labels and isinstance(labels[0], AttributeLabelSet):
        arr = labels_matrix(labels)
    else:
        arr = labels
    return torch.as_tensor(arr, dtype=torch.long).reshape(-1, n_tasks)


def _logits_of(outputs: TaskOutputs | Mapping[str, torch.Tensor]) -> Mapping[str, torch.Tensor]:
    return outputs.logits if isinstance(outputs, TaskOutputs) else outputs


def task_losses(
    outputs: TaskOutputs | Mapping[str, torch.Tensor],
    labels,
    tasks: Sequence[str] = TASK_NAMES,
) -> LossBreakdown:
    """Unweighted sum of per-task cross entropies.

    ``labels`` is one or more :class:`AttributeLabelSet` or an ``(B, 4)`` index
    array in canonical task order; only the columns of ``tasks`` are read.
    """
    logits = _logits_of(outputs)
    missing = [t for t in tasks if t not in logits]
    if missing:
        raise LossContractError(f"outputs lack heads for {missing}")
    y = _label_tensor(labels, len(TASK_NAMES))
    per_task = {}
    for t in tasks:
        col = TASK_NAMES.index(t)
        lt = logits[t]
        per_task[t] = cross_entropy(lt, y[:, col] if lt.dim() > 1 else y[0, col])
    total = sum(per_task.values(), torch.zeros((), dtype=next(iter(per_task.values())).dtype))
    return LossBreakdown(per_task, total)


def mtl_loss(outputs: TaskOutputs | Mapping[str, torch.Tensor], labels) -> LossBreakdown:
    """Sum of the four task losses (T = 4, uniform weights)."""
    return task_losses(outputs, labels, TASK_NAMES)


def stl_loss(outputs: TaskOutputs | Mapping[str, torch.Tensor], labels, task: str) -> LossBreakdown:
    return task_losses(outputs, labels, (task,))


def mtl_mi_concat_loss(outputs: TaskOutputs, labels) -> LossBreakdown:
    """Same functional form as :func:`mtl_loss`, applied to the heads after the instance junction."""
    return mtl_loss(outputs, labels)


def weighted_mtl_mi_loss(outputs: TaskOutputs, labels) -> LossBreakdown:
    """Cross entropy of softmax of the weighted instance average against the true label.

    The weighted average is already what the weighted models emit as logits;
    gradients therefore reach the towers and the weight module alike.
    """
    if outputs.weights is None:
        raise LossContractError("weighted loss needs outputs from a weighted architecture")
    return mtl_loss(outputs, labels)


def loss_for(outputs: TaskOutputs, labels, tasks: Sequence[str]) -> LossBreakdown:
    """Dispatch used by the trainer: the right formulation for whatever produced ``outputs``."""
    if outputs.weights is not None:
        return weighted_mtl_mi_loss(outputs, labels)
    if tuple(tasks) == TASK_NAMES:
        return mtl_loss(outputs, labels)
    return task_losses(outputs, labels, tasks)


def check_labels(labels: AttributeLabelSet) -> None:
    if not isinstance(labels, AttributeLabelSet):
        raise ValidationError(f"expected AttributeLabelSet, got {type(labels).__name__}")
