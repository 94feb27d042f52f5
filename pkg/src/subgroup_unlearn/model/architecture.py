"""Module definitions of the dual encoder.

The image tower is a stack of convolution (+ BatchNorm) + ReLU blocks
followed by global average pooling and a linear projection. The text
tower is an embedding table with one row per prompt string. Modules
are only used as stateless templates: parameters always come from a
:class:`~subgroup_unlearn.model.params.ParameterSet` and are bound with
``torch.func.functional_call``.
"""

from __future__ import annotations

from collections import OrderedDict
from functools import lru_cache
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.types import BlockSpec, ModelSpec

DTYPE = torch.float64


class ConvBlock(nn.Module):
    def __init__(self, in_channels: int, block: BlockSpec) -> None:
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels,
            block.width,
            block.kernel_size,
            stride=block.stride,
            padding=block.kernel_size // 2,
            bias=not block.has_batchnorm,
        )
        self.bn = nn.BatchNorm2d(block.width, momentum=0.1) if block.has_batchnorm else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        return F.relu(x)


class ImageTower(nn.Module):
    def __init__(self, spec: ModelSpec) -> None:
        super().__init__()
        blocks = []
        channels = spec.in_channels
        for block in spec.blocks:
            blocks.append(ConvBlock(channels, block))
            channels = block.width
        self.blocks = nn.ModuleList(blocks)
        self.proj = nn.Linear(channels, spec.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.proj(x.mean(dim=(2, 3)))


class TextTower(nn.Module):
    def __init__(self, spec: ModelSpec) -> None:
        super().__init__()
        self.table = nn.Embedding(len(spec.vocab), spec.embed_dim)

    def forward(self, prompt_ids: torch.Tensor) -> torch.Tensor:
        return self.table(prompt_ids)


class DualEncoder(nn.Module):
    """Image tower + text tower producing unit-norm embeddings."""

    def __init__(self, spec: ModelSpec) -> None:
        super().__init__()
        self.spec = spec
        self.image = ImageTower(spec)
        self.text = TextTower(spec)

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.image(images), dim=-1)

    def encode_text(self, prompt_ids: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.text(prompt_ids), dim=-1)

    def forward(
        self,
        images: Optional[torch.Tensor] = None,
        prompt_ids: Optional[torch.Tensor] = None,
    ) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
        img = self.encode_image(images) if images is not None else None
        txt = self.encode_text(prompt_ids) if prompt_ids is not None else None
        return img, txt


def build_module(spec: ModelSpec) -> DualEncoder:
    """Fresh float64 module with PyTorch's default initialization."""
    return DualEncoder(spec).to(DTYPE)


@lru_cache(maxsize=16)
def template(spec: ModelSpec) -> DualEncoder:
    """Shared evaluation-mode template for functional calls."""
    module = build_module(spec)
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def state_entries(module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    """Parameters and BN running statistics of ``module`` (no step counters)."""
    return OrderedDict(
        (name, t.detach().clone())
        for name, t in module.state_dict().items()
        if not name.endswith("num_batches_tracked")
    )


@lru_cache(maxsize=16)
def parameter_shapes(spec: ModelSpec) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    """Ordered ``(layer-path, shape)`` pairs every ParameterSet of ``spec`` holds."""
    return tuple((name, tuple(t.shape)) for name, t in state_entries(template(spec)).items())


def buffer_names(spec: ModelSpec) -> Tuple[str, ...]:
    return tuple(n for n, _ in parameter_shapes(spec) if n.endswith(("running_mean", "running_var")))


def layer_of(entry: str) -> str:
    """Layer path owning an entry, e.g. ``image.proj.weight`` -> ``image.proj``."""
    return entry.rsplit(".", 1)[0]


def layer_entries(spec: ModelSpec) -> Dict[str, Tuple[str, ...]]:
    """Trainable entries (no BN buffers) grouped by image-tower layer, in tower order."""
    grouped: Dict[str, list] = OrderedDict((layer, []) for layer in spec.image_layers())
    buffers = set(buffer_names(spec))
    for name, _ in parameter_shapes(spec):
        if name in buffers or not name.startswith("image."):
            continue
        grouped[layer_of(name)].append(name)
    return OrderedDict((k, tuple(v)) for k, v in grouped.items())
