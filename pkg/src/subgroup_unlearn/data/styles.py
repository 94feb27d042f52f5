"""Deterministic style transforms.

Style ids: 1 edge sketch, 2 posterize, 3 grayscale (0 means unstyled).
Transforms act on pixels only; labels and example ids are kept.
"""

from __future__ import annotations

from typing import Callable, Dict

import torch
import torch.nn.functional as F

from ..core.errors import ConfigurationError
from ..core.types import STYLE_NAMES
from .dataset import IMAGE_DTYPE, LabeledDataset, concat

POSTERIZE_LEVELS = 3
LUMA = (0.299, 0.587, 0.114)
# ids of styled copies are offset so that copies never collide
STYLE_ID_STRIDE = 1_000_000

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=IMAGE_DTYPE)


def grayscale(images: torch.Tensor) -> torch.Tensor:
    weights = torch.tensor(LUMA, dtype=images.dtype).view(1, 3, 1, 1)
    luma = (images * weights).sum(dim=1, keepdim=True)
    return luma.expand_as(images).clone()


def posterize(images: torch.Tensor) -> torch.Tensor:
    return torch.round(images * POSTERIZE_LEVELS) / POSTERIZE_LEVELS


def edge_sketch(images: torch.Tensor) -> torch.Tensor:
    """Sobel gradient magnitude of the luminance, replicated on every channel."""
    luma = grayscale(images)[:, :1]
    padded = F.pad(luma, (1, 1, 1, 1), mode="replicate")
    kx = _SOBEL_X.to(images.dtype).view(1, 1, 3, 3)
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, kx.transpose(2, 3))
    magnitude = torch.sqrt(gx ** 2 + gy ** 2).clamp(0.0, 1.0)
    return magnitude.expand_as(images).clone()


STYLES: Dict[int, Callable[[torch.Tensor], torch.Tensor]] = {
    1: edge_sketch,
    2: posterize,
    3: grayscale,
}


def apply_style(dataset: LabeledDataset, style_id: int) -> LabeledDataset:
    """Restyle every image of ``dataset``.

    Raises:
        ConfigurationError: If ``style_id`` is not 1, 2 or 3.
    """
    if style_id not in STYLES:
        raise ConfigurationError(
            f"unknown style id {style_id}; expected one of "
            + ", ".join(f"{k} ({STYLE_NAMES[k]})" for k in STYLES)
        )
    images = STYLES[style_id](dataset.images)
    return dataset.with_images(images, style=style_id, name=f"{dataset.name}+{STYLE_NAMES[style_id]}")


def with_all_styles(dataset: LabeledDataset) -> LabeledDataset:
    """The unstyled dataset followed by one restyled copy per style."""
    parts = [dataset]
    for style_id in STYLES:
        styled = apply_style(dataset, style_id)
        parts.append(LabeledDataset(styled.images, styled.superclass, styled.subgroup, styled.style,
                                    styled.ids + style_id * STYLE_ID_STRIDE, styled.prompts,
                                    styled.taxonomy, styled.name))
    return concat(parts, f"{dataset.name}+styles")
