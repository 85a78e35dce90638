"""2048-d component embeddings: pretrained ResNet-50, a hashing stub, or a tiny trainable CNN."""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

EMBED_DIM = 2048
INPUT_SHAPE = (3, 224, 224)


class BackboneError(RuntimeError):
    """Weights could not be loaded or an input has the wrong shape."""


class BackboneKind(str, Enum):
    PRETRAINED_RESNET50 = "pretrained_resnet50"
    DETERMINISTIC_STUB = "deterministic_stub"
    TRAINABLE_TINY = "trainable_tiny"


@dataclass(frozen=True)
class BackboneConfig:
    kind: BackboneKind
    weights_path: Optional[str] = None
    frozen: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind == BackboneKind.PRETRAINED_RESNET50 and not self.weights_path:
            raise BackboneError("pretrained_resnet50 requires weights_path")


def parameter_checksum(module: nn.Module) -> str:
    """sha256 over the state dict (names, dtypes, shapes and raw bytes) in key order."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        t = tensor.detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


# -- stub ---------------------------------------------------------------------

def stub_embed(image: np.ndarray, seed: int = 0, levels: int = 32) -> np.ndarray:
    """Unit-norm pseudo-random vector keyed on the quantized image bytes and ``seed``."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.shape != INPUT_SHAPE:
        raise BackboneError(f"expected input shape {INPUT_SHAPE}, got {arr.shape}")
    q = np.clip(np.floor((arr + 3.0) / 6.0 * levels), 0, levels - 1).astype(np.uint8)
    digest = hashlib.blake2b(q.tobytes(), digest_size=16, key=str(int(seed)).encode()).digest()
    rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint32))
    vec = rng.standard_normal(EMBED_DIM)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


class StubBackbone(nn.Module):
    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed
        # Registered so checksum and device moves behave like the real backbones.
        self.register_buffer("seed_tensor", torch.tensor([seed], dtype=torch.int64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        arr = x.detach().cpu().numpy()
        out = np.stack([stub_embed(a, self.seed) for a in arr])
        return torch.from_numpy(out).to(dtype=x.dtype, device=x.device)


# -- trainable tiny ------------------------------------------------------------

def _conv_block(cin: int, cout: int, kernel: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Three strided conv blocks, global average pooling and a linear projection to 2048."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            _conv_block(3, width, 5, 2),
            _conv_block(width, 2 * width, 3, 2),
            _conv_block(2 * width, 4 * width, 3, 2),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.projection = nn.Linear(4 * width, EMBED_DIM)

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.pool(self.features(x)), 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.projection(self.pooled(x))


# -- ResNet-50 -------------------------------------------------------------------

def _resnet50_trunk() -> nn.Module:
    from torchvision.models import resnet50

    model = resnet50(weights=None)
    model.fc = nn.Identity()
    return model


def _expected_resnet_keys() -> set[str]:
    return set(_resnet50_trunk().state_dict().keys())


class PretrainedResNet50(nn.Module):
    def __init__(self, trunk: nn.Module, checksum: str):
        super().__init__()
        self.trunk = trunk
        self.checksum = checksum

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.trunk(x)


def load_pretrained(weights_path: str | os.PathLike) -> PretrainedResNet50:
    """Load ResNet-50 conv weights (a ``torch.save``-d state dict) without the classifier.

    Extra ``fc.*`` entries from an ImageNet checkpoint are ignored; anything else
    missing or unexpected is reported as a layer inventory mismatch.
    """
    path = Path(weights_path)
    if not path.is_file():
        raise BackboneError(f"weights file not found: {path}")
    try:
        with open(path, "rb") as fh:
            state = torch.load(io.BytesIO(fh.read()), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types on corrupt archives
        raise BackboneError(f"could not read weights archive {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise BackboneError(f"{path}: expected a state dict, found {type(state).__name__}")
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    expected = _expected_resnet_keys()
    found = set(state)
    if found != expected:
        missing = sorted(expected - found)
        unexpected = sorted(found - expected)
        raise BackboneError(
            f"{path}: layer inventory mismatch; expected {len(expected)} tensors, found {len(found)}; "
            f"missing={missing[:8]}{'...' if len(missing) > 8 else ''} "
            f"unexpected={unexpected[:8]}{'...' if len(unexpected) > 8 else ''}"
        )
    trunk = _resnet50_trunk()
    try:
        trunk.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise BackboneError(f"{path}: incompatible tensor shapes: {exc}") from exc
    trunk.eval()
    return PretrainedResNet50(trunk, parameter_checksum(trunk))


def build_backbone(config: BackboneConfig) -> nn.Module:
    if config.kind == BackboneKind.DETERMINISTIC_STUB:
        module: nn.Module = StubBackbone(config.seed)
    elif config.kind == BackboneKind.TRAINABLE_TINY:
        torch.manual_seed(config.seed)
        module = TinyBackbone()
    else:
        module = load_pretrained(config.weights_path)
    if config.frozen:
        for p in module.parameters():
            p.requires_grad_(False)
        module.eval()
    return module


def _check_batch(batch: Sequence[np.ndarray] | torch.Tensor) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        items = list(batch)
    else:
        items = list(batch)
    tensors = []
    for i, item in enumerate(items):
        t = torch.as_tensor(np.asarray(item) if not isinstance(item, torch.Tensor) else item)
        if tuple(t.shape) != INPUT_SHAPE:
            raise BackboneError(f"batch item {i}: expected shape {INPUT_SHAPE}, got {tuple(t.shape)}")
        tensors.append(t.to(torch.float32))
    if not tensors:
        return torch.empty((0, *INPUT_SHAPE))
    return torch.stack(tensors)


@torch.no_grad()
def embed(batch: Sequence[np.ndarray] | torch.Tensor, backbone: nn.Module) -> np.ndarray:
    """Embed normalized images in evaluation mode; returns an (n, 2048) float32 array."""
    x = _check_batch(batch)
    if x.shape[0] == 0:
        return np.zeros((0, EMBED_DIM), dtype=np.float32)
    was_training = backbone.training
    backbone.eval()
    try:
        out = backbone(x)
    finally:
        backbone.train(was_training)
    out = out.detach().cpu().numpy().astype(np.float32)
    if out.shape != (x.shape[0], EMBED_DIM) or not np.all(np.isfinite(out)):
        raise BackboneError(f"backbone produced invalid embeddings of shape {out.shape}")
    return out


def backbone_checksum(backbone: nn.Module) -> str:
    return getattr(backbone, "checksum", None) or parameter_checksum(backbone)


class EmbeddingCache:
    """On-disk memo of frozen-backbone embeddings: ``<root>/<checksum>/<component_id>.f32``."""

    def __init__(self, root: str | os.PathLike, checksum: str):
        self.dir = Path(root) / checksum
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, component_id: str) -> Path:
        return self.dir / f"{component_id}.f32"

    def get(self, component_id: str) -> Optional[np.ndarray]:
        p = self.path(component_id)
        if not p.is_file():
            return None
        vec = np.fromfile(p, dtype="<f4")
        if vec.shape != (EMBED_DIM,):
            return None
        return vec

    def put(self, component_id: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype="<f4")
        if vec.shape != (EMBED_DIM,):
            raise BackboneError(f"cache entry must have shape ({EMBED_DIM},), got {vec.shape}")
        tmp = self.path(component_id).with_suffix(".tmp")
        vec.tofile(tmp)
        os.replace(tmp, self.path(component_id))


def default_cache_dir() -> Path:
    return Path(os.environ.get("DOCATTR_CACHE", Path.home() / ".cache" / "docattr"))
