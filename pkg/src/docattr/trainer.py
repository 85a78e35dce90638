"""SGD training loop, evaluation and run-directory checkpoints.

An epoch is one pass over the training split in a seeded order. Every source
of randomness (batch order, dropout, input noise) is derived from
``(seed, epoch, position)`` rather than carried over from earlier epochs, so a
run resumed from its last checkpoint continues exactly as the unbroken run
would have.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
import torch
from PIL import Image
from torch import nn

from docattr.backbone import (
    BackboneConfig,
    BackboneKind,
    EmbeddingCache,
    backbone_checksum,
    build_backbone,
    embed,
)
from docattr.core import TASK_NAMES, AttributeLabelSet, ValidationError, labels_matrix
from docattr.dataset.records import ComponentRecord, Manifest, resolve_image_path
from docattr.dataset.transforms import NOISE_STD, add_gaussian_noise, resize_u8, standardize
from docattr.losses import loss_for
from docattr.zoo.models import ModelConfig, ModelGraph, build
from docattr.zoo.registry import architecture_spec

INSTANCE_MODES = ("word", "patch", "both", "noisy_patch")
METRICS_HEADER = ("epoch", "split", "task", "accuracy", "loss")
_EVAL_NOISE_TAG = 0x5EED


class TrainConfigError(ValueError):
    """The requested run cannot be set up (empty split, wrong instance mode, ...)."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step_size: int = 10
    decay_gamma: float = 0.1
    epochs: int = 30
    batch_size: int = 200
    seed: int = 0
    steps_per_epoch: Optional[int] = None

    def __post_init__(self) -> None:
        # lr0 = 0 is allowed: it is the natural "parameters must not move" probe.
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise TrainConfigError("lr0, momentum and weight_decay must be non-negative")
        if self.step_size < 1 or self.epochs < 1 or self.batch_size < 1:
            raise TrainConfigError("step_size, epochs and batch_size must be positive")
        if not 0 < self.decay_gamma <= 1:
            raise TrainConfigError("decay_gamma must lie in (0, 1]")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise TrainConfigError("steps_per_epoch must be positive when given")

    def to_json(self) -> dict:
        return asdict(self)


def default_batch_size(arch: str, instance: str) -> int:
    """200 for single-task nets, 800/500 for multi-task word/patch, 100 for two-input models."""
    spec = architecture_spec(arch)
    if spec.instances == 2:
        return 100
    if len(spec.tasks) == 1 or spec.arch_id == "stl_head":
        return 200
    return 800 if instance == "word" else 500


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay_gamma ** (epoch // cfg.step_size)


def make_optimizer(params: Iterable[nn.Parameter], cfg: OptimizerConfig) -> torch.optim.SGD:
    """Classical momentum; weight decay is added to the gradient before the momentum update."""
    return torch.optim.SGD(
        params, lr=lr_at(0, cfg), momentum=cfg.momentum, weight_decay=cfg.weight_decay, nesterov=False
    )


def _derive(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


# -- samples -------------------------------------------------------------------

def _labels_of(rec: ComponentRecord, manifest: Manifest) -> AttributeLabelSet:
    if rec.labels is not None:
        return rec.labels
    return manifest.page(rec.page_id).labels


@dataclass(frozen=True)
class Sample:
    """One network input: one or two component views of the same page."""

    key: str
    page_id: str
    slots: tuple[ComponentRecord, ...]
    noisy: tuple[bool, ...]
    labels: AttributeLabelSet


@dataclass
class Pairing:
    pairs: list[tuple[ComponentRecord, ComponentRecord]]
    excluded: dict[str, str] = field(default_factory=dict)

    def __iter__(self) -> Iterator[tuple[ComponentRecord, ComponentRecord]]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def pair_components(manifest: Manifest, seed: int = 0, split: Optional[str] = None) -> Pairing:
    """Match words to patches within each page, cycling whichever list is shorter.

    Pages are visited in id order and both lists are shuffled with one generator
    seeded by ``seed``; pages lacking either kind are skipped and reported.
    """
    by_page: dict[str, dict[str, list[ComponentRecord]]] = {}
    for rec in manifest.select(split=split):
        by_page.setdefault(rec.page_id, {"word": [], "patch": []})[rec.kind].append(rec)
    rng = np.random.default_rng(seed)
    result = Pairing([])
    for page_id in sorted(by_page):
        words = sorted(by_page[page_id]["word"], key=lambda r: r.component_id)
        patches = sorted(by_page[page_id]["patch"], key=lambda r: r.component_id)
        if not words or not patches:
            result.excluded[page_id] = "no patch components" if words else "no word components"
            continue
        pw = rng.permutation(len(words))
        pp = rng.permutation(len(patches))
        for i in range(max(len(words), len(patches))):
            w = words[pw[i % len(words)]]
            p = patches[pp[i % len(patches)]]
            if _labels_of(w, manifest) != _labels_of(p, manifest):
                raise ValidationError(f"page {page_id}: {w.component_id} and {p.component_id} disagree on labels")
            result.pairs.append((w, p))
    return result


def build_samples(
    manifest: Manifest, split: str, instance: str, instances: int, seed: int = 0
) -> list[Sample]:
    if instance not in INSTANCE_MODES:
        raise TrainConfigError(f"unknown instance mode {instance!r}; expected one of {INSTANCE_MODES}")
    needed = 2 if instance in ("both", "noisy_patch") else 1
    if needed != instances:
        raise TrainConfigError(
            f"instance mode {instance!r} feeds {needed} input(s) but the architecture takes {instances}"
        )
    if instance == "both":
        return [
            Sample(f"{w.component_id}+{p.component_id}", w.page_id, (w, p), (False, False),
                   _labels_of(w, manifest))
            for w, p in pair_components(manifest, seed, split)
        ]
    kind = "word" if instance == "word" else "patch"
    recs = sorted(manifest.select(kind=kind, split=split), key=lambda r: r.component_id)
    if instance == "noisy_patch":
        return [
            Sample(r.component_id, r.page_id, (r, r), (False, True), _labels_of(r, manifest))
            for r in recs
        ]
    return [Sample(r.component_id, r.page_id, (r,), (False,), _labels_of(r, manifest)) for r in recs]


# -- inputs --------------------------------------------------------------------

class ComponentImages:
    """Crops components out of page images and keeps them as uint8 224x224 canvases.

    Page rasters come either from ``pages`` (page_id -> HxWx3 array) or from the
    files the manifest points to.
    """

    def __init__(
        self,
        manifest: Manifest,
        manifest_path: Optional[str | os.PathLike] = None,
        pages: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.manifest = manifest
        self.manifest_path = manifest_path
        self.pages = dict(pages or {})
        self._pages = manifest.page_map()
        self._canvas: dict[str, np.ndarray] = {}
        self._load = lru_cache(maxsize=4)(self._read_page)

    def _read_page(self, page_id: str) -> np.ndarray:
        page = self._pages[page_id]
        if self.manifest_path is None:
            raise TrainConfigError(f"no raster for page {page_id} and no manifest path to resolve it")
        path = resolve_image_path(page, self.manifest_path)
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))

    def page_image(self, page_id: str) -> np.ndarray:
        if page_id in self.pages:
            return self.pages[page_id]
        return self._load(page_id)

    def canvas(self, rec: ComponentRecord) -> np.ndarray:
        hit = self._canvas.get(rec.component_id)
        if hit is None:
            x, y, w, h = rec.bbox
            crop = self.page_image(rec.page_id)[y:y + h, x:x + w]
            hit = resize_u8(crop)
            self._canvas[rec.component_id] = hit
        return hit

    def tensor(self, rec: ComponentRecord, noise_seed: Optional[int] = None) -> np.ndarray:
        x = standardize(self.canvas(rec).astype(np.float32) / 255.0)
        if noise_seed is not None:
            x = add_gaussian_noise(x, noise_seed, NOISE_STD)
        return x


class Featurizer:
    """Maps components to 2048-d embeddings through the backbone.

    Frozen backbones are evaluated once per clean component and memoized (and
    mirrored to an :class:`EmbeddingCache` when one is given). Trainable ones run
    on every call so gradients reach their parameters.
    """

    def __init__(
        self,
        backbone: nn.Module,
        images: ComponentImages,
        trainable: bool,
        cache: Optional[EmbeddingCache] = None,
        chunk: int = 64,
    ):
        self.backbone = backbone
        self.images = images
        self.trainable = trainable
        self.cache = cache
        self.chunk = chunk
        self._memo: dict[str, np.ndarray] = {}

    def _frozen_clean(self, recs: Sequence[ComponentRecord]) -> np.ndarray:
        missing = []
        for r in recs:
            if r.component_id in self._memo:
                continue
            cached = self.cache.get(r.component_id) if self.cache else None
            if cached is not None:
                self._memo[r.component_id] = cached
            elif r.component_id not in {m.component_id for m in missing}:
                missing.append(r)
        for start in range(0, len(missing), self.chunk):
            part = missing[start:start + self.chunk]
            vecs = embed([self.images.tensor(r) for r in part], self.backbone)
            for r, v in zip(part, vecs):
                self._memo[r.component_id] = v
                if self.cache:
                    self.cache.put(r.component_id, v)
        return np.stack([self._memo[r.component_id] for r in recs])

    def __call__(self, recs: Sequence[ComponentRecord], noise_seeds: Sequence[Optional[int]]) -> torch.Tensor:
        if self.trainable:
            x = torch.from_numpy(np.stack([self.images.tensor(r, s) for r, s in zip(recs, noise_seeds)]))
            return self.backbone(x)
        if all(s is None for s in noise_seeds):
            return torch.from_numpy(self._frozen_clean(recs))
        out = np.empty((len(recs), 2048), dtype=np.float32)
        clean = [i for i, s in enumerate(noise_seeds) if s is None]
        noisy = [i for i, s in enumerate(noise_seeds) if s is not None]
        if clean:
            out[clean] = self._frozen_clean([recs[i] for i in clean])
        out[noisy] = embed([self.images.tensor(recs[i], noise_seeds[i]) for i in noisy], self.backbone)
        return torch.from_numpy(out)


class Pipeline(nn.Module):
    """Head model plus, when it is being trained, the backbone feeding it."""

    def __init__(self, model: ModelGraph, backbone: Optional[nn.Module] = None):
        super().__init__()
        self.model = model
        self.backbone = backbone


# -- metrics -------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    split: str
    accuracy: dict[str, float]
    losses: dict[str, float]
    seconds: float = 0.0


class MetricsLog:
    """Per-epoch, per-split accuracies and loss breakdowns."""

    def __init__(self, tasks: Sequence[str] = TASK_NAMES, rows: Optional[list[EpochMetrics]] = None):
        self.tasks = tuple(tasks)
        self.rows: list[EpochMetrics] = list(rows or [])

    def add(self, row: EpochMetrics) -> None:
        if self.rows and row.epoch < self.rows[-1].epoch:
            raise ValueError(f"epoch {row.epoch} logged after epoch {self.rows[-1].epoch}")
        self.rows.append(row)

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self.rows})

    def splits(self) -> list[str]:
        return sorted({r.split for r in self.rows}, key=lambda s: ("train", "val", "test").index(s)
                      if s in ("train", "val", "test") else 99)

    def get(self, epoch: int, split: str) -> EpochMetrics:
        for r in self.rows:
            if r.epoch == epoch and r.split == split:
                return r
        raise KeyError((epoch, split))

    def truncate(self, last_epoch: int) -> "MetricsLog":
        return MetricsLog(self.tasks, [r for r in self.rows if r.epoch <= last_epoch])

    def csv_text(self) -> str:
        """``epoch,split,task,accuracy,loss``; a ``total`` row carries the summed loss and mean accuracy."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            for t in self.tasks:
                w.writerow([r.epoch, r.split, t, _fmt(r.accuracy[t]), _fmt(r.losses[t])])
            w.writerow([r.epoch, r.split, "total", _fmt(mean_accuracy(r.accuracy)), _fmt(r.losses["total"])])
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "MetricsLog":
        grouped: dict[tuple[int, str], EpochMetrics] = {}
        tasks: list[str] = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (int(row["epoch"]), row["split"])
                m = grouped.setdefault(key, EpochMetrics(key[0], key[1], {}, {}))
                if row["task"] == "total":
                    m.losses["total"] = float(row["loss"])
                    continue
                if row["task"] not in tasks:
                    tasks.append(row["task"])
                m.accuracy[row["task"]] = float(row["accuracy"])
                m.losses[row["task"]] = float(row["loss"])
        return cls(tasks, list(grouped.values()))


def _fmt(x: float) -> str:
    return repr(float(x))


def mean_accuracy(acc: Mapping[str, float]) -> float:
    return float(sum(acc.values()) / len(acc))


# -- evaluation ----------------------------------------------------------------

def top1_accuracy(scores: Mapping[str, np.ndarray], labels: np.ndarray) -> dict[str, float]:
    """Fraction of rows whose argmax matches the label column of each task."""
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise ValueError("cannot compute accuracy of an empty prediction list")
    out = {}
    for task, s in scores.items():
        s = np.asarray(s)
        if s.shape[0] != labels.shape[0]:
            raise ValueError(f"{task}: {s.shape[0]} predictions for {labels.shape[0]} labels")
        out[task] = float(np.mean(np.argmax(s, axis=1) == labels[:, TASK_NAMES.index(task)]))
    return out


@dataclass
class EvalResult:
    accuracy: dict[str, float]
    losses: dict[str, float]
    keys: list[str]
    page_ids: list[str]
    probabilities: dict[str, np.ndarray]
    labels: np.ndarray


def _slot_inputs(
    featurizer: Featurizer, batch: Sequence[Sample], noise_seeds: Sequence[Sequence[Optional[int]]]
) -> list[torch.Tensor]:
    n_slots = len(batch[0].slots)
    return [
        featurizer([s.slots[k] for s in batch], [seeds[k] for seeds in noise_seeds])
        for k in range(n_slots)
    ]


def _eval_noise(seed: int, index: int, sample: Sample) -> tuple[Optional[int], ...]:
    return tuple(_derive(seed, _EVAL_NOISE_TAG, index, k) if flag else None
                 for k, flag in enumerate(sample.noisy))


@torch.no_grad()
def evaluate_samples(
    model: ModelGraph,
    samples: Sequence[Sample],
    featurizer: Featurizer,
    seed: int = 0,
    batch_size: int = 64,
) -> EvalResult:
    if not samples:
        raise TrainConfigError("cannot evaluate an empty split")
    was = model.training, featurizer.backbone.training
    model.eval()
    featurizer.backbone.eval()
    tasks = model.tasks
    probs: dict[str, list[np.ndarray]] = {t: [] for t in tasks}
    sums = {t: 0.0 for t in tasks}
    try:
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            seeds = [_eval_noise(seed, start + i, s) for i, s in enumerate(batch)]
            out = model(*_slot_inputs(featurizer, batch, seeds))
            y = labels_matrix([s.labels for s in batch])
            breakdown = loss_for(out, y, tasks)
            for t in tasks:
                sums[t] += float(breakdown.per_task[t]) * len(batch)
                probs[t].append(torch.softmax(out.logits[t].double(), dim=1).numpy())
    finally:
        model.train(was[0])
        featurizer.backbone.train(was[1])
    labels = labels_matrix([s.labels for s in samples])
    stacked = {t: np.concatenate(v) for t, v in probs.items()}
    losses = {t: sums[t] / len(samples) for t in tasks}
    losses["total"] = float(sum(losses[t] for t in tasks))
    return EvalResult(
        accuracy=top1_accuracy(stacked, labels),
        losses=losses,
        keys=[s.key for s in samples],
        page_ids=[s.page_id for s in samples],
        probabilities=stacked,
        labels=labels,
    )


# -- checkpoints ---------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointRecord:
    epoch: int
    arch: str
    model_path: str
    optimizer_path: str
    config_hash: str
    metrics: dict


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _manifest_fingerprint(manifest: Manifest) -> str:
    h = hashlib.sha256()
    for r in sorted(manifest.records, key=lambda r: r.component_id):
        h.update(f"{r.component_id}|{r.page_id}|{r.kind}|{r.bbox}|{r.split}\n".encode())
    return h.hexdigest()


def _save_checkpoint(
    directory: Path, pipeline: Pipeline, optimizer: torch.optim.Optimizer, meta: dict
) -> CheckpointRecord:
    directory.mkdir(parents=True, exist_ok=True)
    model_path, opt_path = directory / "model.pt", directory / "optimizer.pt"
    torch.save(pipeline.state_dict(), model_path)
    torch.save(optimizer.state_dict(), opt_path)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return CheckpointRecord(meta["epoch"], meta["arch"], str(model_path), str(opt_path),
                            meta["config_hash"], meta["metrics"])


@dataclass
class TrainResult:
    model: ModelGraph
    backbone: nn.Module
    featurizer: Featurizer
    metrics: MetricsLog
    checkpoints: list[CheckpointRecord]
    best_epoch: int
    run_dir: Optional[Path]
    config: dict


def run_config(
    arch: str,
    instance: str,
    backbone: BackboneConfig,
    cfg: OptimizerConfig,
    model_config: ModelConfig,
    manifest: Manifest,
) -> dict:
    """Everything that determines a run's trajectory, except the epoch budget."""
    opt = cfg.to_json()
    opt.pop("epochs")
    return {
        "arch": architecture_spec(arch).arch_id,
        "instance": instance,
        "optimizer": opt,
        "backbone": {"kind": BackboneKind(backbone.kind).value, "weights_path": backbone.weights_path,
                     "frozen": backbone.frozen, "seed": backbone.seed},
        "model": model_config.to_json(),
        "manifest": _manifest_fingerprint(manifest),
    }


def _check_finite(breakdown, epoch: int, step: int, batch: Sequence[Sample], run_dir: Optional[Path]) -> None:
    if math.isfinite(float(breakdown.total.detach())):
        return
    snapshot = {
        "epoch": epoch,
        "step": step,
        "losses": breakdown.as_floats(),
        "components": [s.key for s in batch],
    }
    if run_dir is not None:
        (run_dir / "nan_snapshot.json").write_text(json.dumps(snapshot, indent=2, default=str) + "\n")
    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}", snapshot)


def train(
    arch: str,
    manifest: Manifest,
    backbone: BackboneConfig,
    cfg: OptimizerConfig,
    *,
    instance: str = "patch",
    model_config: Optional[ModelConfig] = None,
    run_dir: Optional[str | os.PathLike] = None,
    images: Optional[ComponentImages] = None,
    manifest_path: Optional[str | os.PathLike] = None,
    cache_dir: Optional[str | os.PathLike] = None,
    resume: bool = False,
    progress: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Train ``arch`` on the manifest's train split, validating after every epoch.

    Writes ``metrics.csv``, ``summary.json`` and ``checkpoints/{last,best}`` to
    ``run_dir`` when one is given; ``resume`` continues from ``checkpoints/last``.
    """
    spec = architecture_spec(arch)
    model_config = model_config or ModelConfig(seed=cfg.seed)
    train_samples = build_samples(manifest, "train", instance, spec.instances, cfg.seed)
    val_samples = build_samples(manifest, "val", instance, spec.instances, cfg.seed)
    if not train_samples:
        raise TrainConfigError("train split has no usable components")
    if not val_samples:
        raise TrainConfigError("val split has no usable components")

    bb = build_backbone(backbone)
    trainable = not backbone.frozen
    images = images or ComponentImages(manifest, manifest_path)
    cache = None
    if cache_dir is not None and not trainable:
        cache = EmbeddingCache(cache_dir, backbone_checksum(bb))
    featurizer = Featurizer(bb, images, trainable, cache)
    model = build(spec.arch_id, model_config)
    pipeline = Pipeline(model, bb if trainable else None)
    params = [p for p in pipeline.parameters() if p.requires_grad]
    optimizer = make_optimizer(params, cfg)

    config = run_config(spec.arch_id, instance, backbone, cfg, model_config, manifest)
    chash = config_hash(config)
    out_dir = Path(run_dir) if run_dir is not None else None
    metrics = MetricsLog(spec.tasks)
    checkpoints: list[CheckpointRecord] = []
    start_epoch, best_epoch, best_score = 0, -1, -math.inf

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        last = out_dir / "checkpoints" / "last" / "meta.json"
        if resume and last.is_file():
            meta = json.loads(last.read_text())
            if meta["config_hash"] != chash:
                raise TrainConfigError(f"{out_dir}: checkpoint was written by a different configuration")
            pipeline.load_state_dict(torch.load(last.parent / "model.pt", weights_only=True))
            optimizer.load_state_dict(torch.load(last.parent / "optimizer.pt", weights_only=True))
            start_epoch = meta["epoch"] + 1
            best_epoch, best_score = meta["best_epoch"], meta["best_score"]
            metrics = MetricsLog.read_csv(out_dir / "metrics.csv").truncate(meta["epoch"])
            metrics.tasks = spec.tasks
        (out_dir / "config.json").write_text(
            json.dumps({**config, "epochs": cfg.epochs, "config_hash": chash}, indent=2, sort_keys=True) + "\n"
        )

    tasks = spec.tasks
    n = len(train_samples)
    steps = math.ceil(n / cfg.batch_size)
    if cfg.steps_per_epoch is not None:
        steps = min(steps, cfg.steps_per_epoch)
    wall: dict[int, float] = {}

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        for group in optimizer.param_groups:
            group["lr"] = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        torch.manual_seed(_derive(cfg.seed, epoch))
        pipeline.train()
        if not trainable:
            bb.eval()
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            if len(idx) < 2:
                # BatchNorm cannot normalize a single item; a lone remainder is skipped.
                continue
            batch = [train_samples[i] for i in idx]
            seeds = [
                tuple(_derive(cfg.seed, epoch, int(i), k) if flag else None for k, flag in enumerate(s.noisy))
                for i, s in zip(idx, batch)
            ]
            out = model(*_slot_inputs(featurizer, batch, seeds))
            breakdown = loss_for(out, labels_matrix([s.labels for s in batch]), tasks)
            _check_finite(breakdown, epoch, step, batch, out_dir)
            optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            optimizer.step()

        rows = []
        for split, samples in (("train", train_samples), ("val", val_samples)):
            res = evaluate_samples(model, samples, featurizer, cfg.seed)
            rows.append(EpochMetrics(epoch, split, res.accuracy, res.losses))
        wall[epoch] = time.perf_counter() - t0
        for row in rows:
            row.seconds = wall[epoch]
            metrics.add(row)
            if progress:
                progress(row)
        score = mean_accuracy(metrics.get(epoch, "val").accuracy)
        improved = score > best_score
        if improved:
            best_epoch, best_score = epoch, score

        if out_dir is not None:
            snap = {s: {"accuracy": metrics.get(epoch, s).accuracy, "losses": metrics.get(epoch, s).losses}
                    for s in ("train", "val")}
            meta = {"epoch": epoch, "arch": spec.arch_id, "instance": instance, "config_hash": chash,
                    "metrics": snap, "best_epoch": best_epoch, "best_score": best_score}
            ckpt = out_dir / "checkpoints"
            checkpoints = [c for c in checkpoints if Path(c.model_path).parent.name != "last"]
            checkpoints.append(_save_checkpoint(ckpt / "last", pipeline, optimizer, meta))
            if improved:
                checkpoints = [c for c in checkpoints if Path(c.model_path).parent.name != "best"]
                checkpoints.append(_save_checkpoint(ckpt / "best", pipeline, optimizer, meta))
            metrics.write_csv(out_dir / "metrics.csv")
            _write_summary(out_dir, config, chash, metrics, best_epoch, wall)

    return TrainResult(model, bb, featurizer, metrics, checkpoints, best_epoch, out_dir, config)


def _write_summary(out_dir: Path, config: dict, chash: str, metrics: MetricsLog, best_epoch: int,
                   wall: dict[int, float]) -> None:
    last = max(metrics.epochs())
    summary = {
        "arch": config["arch"],
        "instance": config["instance"],
        "seed": config["optimizer"]["seed"],
        "config_hash": chash,
        "epochs_completed": last + 1,
        "best_epoch": best_epoch,
        "final": {s: metrics.get(last, s).accuracy for s in ("train", "val")},
        "best": {s: metrics.get(best_epoch, s).accuracy for s in ("train", "val")} if best_epoch >= 0 else {},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # Wall-clock is kept apart so the other files stay byte-stable across reruns.
    timing_path = out_dir / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.is_file() else {}
    timing.update({str(k): v for k, v in wall.items()})
    timing_path.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")


# -- loading and evaluation of saved runs ----------------------------------------

def backbone_config_from_json(obj: Mapping) -> BackboneConfig:
    return BackboneConfig(BackboneKind(obj["kind"]), obj.get("weights_path"), obj["frozen"], obj["seed"])


@dataclass
class LoadedRun:
    model: ModelGraph
    backbone: nn.Module
    backbone_config: BackboneConfig
    config: dict
    meta: dict


def load_run(run_dir: str | os.PathLike, which: str = "best") -> LoadedRun:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    ckpt = run_dir / "checkpoints" / which
    if not cfg_path.is_file() or not (ckpt / "model.pt").is_file():
        raise FileNotFoundError(f"{run_dir} does not contain a trained run ({which} checkpoint)")
    config = json.loads(cfg_path.read_text())
    meta = json.loads((ckpt / "meta.json").read_text())
    bcfg = backbone_config_from_json(config["backbone"])
    bb = build_backbone(bcfg)
    model = build(config["arch"], ModelConfig(**config["model"]))
    pipeline = Pipeline(model, bb if not bcfg.frozen else None)
    pipeline.load_state_dict(torch.load(ckpt / "model.pt", weights_only=True))
    model.eval()
    bb.eval()
    return LoadedRun(model, bb, bcfg, config, meta)


def evaluate(
    model: ModelGraph,
    manifest: Manifest,
    split: str,
    backbone: nn.Module | BackboneConfig,
    *,
    instance: str = "patch",
    images: Optional[ComponentImages] = None,
    manifest_path: Optional[str | os.PathLike] = None,
    seed: int = 0,
    batch_size: int = 64,
) -> EvalResult:
    """Component-level top-1 accuracy and mean losses of ``model`` on one split."""
    if isinstance(backbone, BackboneConfig):
        backbone = build_backbone(replace(backbone, frozen=True))
    samples = build_samples(manifest, split, instance, model.instances, seed)
    if not samples:
        raise TrainConfigError(f"split {split!r} has no usable components")
    images = images or ComponentImages(manifest, manifest_path)
    return evaluate_samples(model, samples, Featurizer(backbone, images, trainable=False), seed, batch_size)
