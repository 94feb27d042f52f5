"""Procedural superclass/subgroup image generator.

Each subgroup is described by ``n_factors`` generative factors drawn on
the canvas: even slots are Gaussian colour blobs, odd slots are
periodic colour textures. Of these slots, ``round(overlap * n_factors)``
are shared by all subgroups of a superclass and the rest are drawn per
subgroup, so ``overlap`` directly controls how entangled siblings are.
Factors depend only on the taxonomy seed; the texture family and the
render resolution only change how factors are drawn, which is what the
out-of-domain suites vary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F

from ..core.hashing import derive_seed
from ..core.types import TaxonomySpec
from .dataset import IMAGE_DTYPE, LabeledDataset

logger = logging.getLogger(__name__)

CHANNELS = 3
BACKGROUND = 0.15
POSITION_JITTER = 0.04
AMPLITUDE_JITTER = 0.1
PHASE_JITTER = 0.3


@dataclass(frozen=True)
class Factor:
    """One generative factor. ``key`` names its owner and slot."""
    key: str
    kind: str
    params: Tuple[float, ...]


@dataclass(frozen=True)
class ConstructionLog:
    """Which factor each subgroup uses, per slot."""
    shared_slots: int
    factors: Dict[str, Tuple[str, ...]]

    def shared_between(self, a: str, b: str) -> int:
        return len(set(self.factors[a]) & set(self.factors[b]))

    def to_dict(self) -> Dict[str, object]:
        return {"shared_slots": self.shared_slots, "factors": {k: list(v) for k, v in self.factors.items()}}


def _uniform(gen: torch.Generator, n: int, low: float, high: float) -> List[float]:
    return (low + (high - low) * torch.rand(n, generator=gen, dtype=IMAGE_DTYPE)).tolist()


def _draw_factor(gen: torch.Generator, key: str, slot: int) -> Factor:
    if slot % 2 == 0:
        # centre x, centre y, width, r, g, b
        params = _uniform(gen, 2, 0.2, 0.8) + _uniform(gen, 1, 0.08, 0.2) + _uniform(gen, 3, 0.0, 1.0)
        return Factor(key, "blob", tuple(params))
    # frequency x, frequency y, phase, r, g, b
    freq = _uniform(gen, 2, 0.5, 3.5)
    params = freq + _uniform(gen, 1, 0.0, 2 * math.pi) + _uniform(gen, 3, 0.0, 1.0)
    return Factor(key, "texture", tuple(params))


def taxonomy_factors(spec: TaxonomySpec) -> Tuple[Dict[int, List[Factor]], ConstructionLog]:
    """Factors of every subgroup and the matching construction log."""
    gen = torch.Generator().manual_seed(derive_seed(spec.seed, "factors"))
    n_shared = int(round(spec.overlap * spec.n_factors))
    names = spec.subgroup_names()
    by_subgroup: Dict[int, List[Factor]] = {}
    for c in range(spec.n_superclasses):
        shared = [_draw_factor(gen, f"super{c}/slot{s}", s) for s in range(n_shared)]
        for j in range(spec.subgroups_per_superclass):
            g = c * spec.subgroups_per_superclass + j
            own = [_draw_factor(gen, f"{names[g]}/slot{s}", s) for s in range(n_shared, spec.n_factors)]
            by_subgroup[g] = shared + own
    log = ConstructionLog(
        shared_slots=n_shared,
        factors={names[g]: tuple(f.key for f in fs) for g, fs in by_subgroup.items()},
    )
    return by_subgroup, log


def construction_log(spec: TaxonomySpec) -> ConstructionLog:
    return taxonomy_factors(spec)[1]


def _render(factor: Factor, n: int, size: int, family: str, gen: torch.Generator) -> torch.Tensor:
    axis = (torch.arange(size, dtype=IMAGE_DTYPE) + 0.5) / size
    v, u = torch.meshgrid(axis, axis, indexing="ij")
    amp = 1.0 + AMPLITUDE_JITTER * torch.randn(n, 1, 1, generator=gen, dtype=IMAGE_DTYPE)
    p = factor.params
    color = torch.tensor(p[3:6], dtype=IMAGE_DTYPE).view(1, CHANNELS, 1, 1)
    if factor.kind == "blob":
        cx = p[0] + POSITION_JITTER * torch.randn(n, 1, 1, generator=gen, dtype=IMAGE_DTYPE)
        cy = p[1] + POSITION_JITTER * torch.randn(n, 1, 1, generator=gen, dtype=IMAGE_DTYPE)
        pattern = torch.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2 * p[2] ** 2))
        weight = 0.6
    else:
        phase = p[2] + PHASE_JITTER * torch.randn(n, 1, 1, generator=gen, dtype=IMAGE_DTYPE)
        wave = torch.sin(2 * math.pi * (p[0] * u + p[1] * v) + phase)
        if family == "square":
            wave = torch.sign(wave)
        pattern = 0.5 * (wave + 1.0)
        weight = 0.3
    return weight * color * (amp * pattern).unsqueeze(1)


def render_subgroup(
    factors: List[Factor], n: int, spec: TaxonomySpec, gen: torch.Generator
) -> torch.Tensor:
    """``n`` jittered images of one subgroup, clipped to [0, 1]."""
    size = spec.render_size or spec.image_size
    canvas = torch.full((n, CHANNELS, size, size), BACKGROUND, dtype=IMAGE_DTYPE)
    for factor in factors:
        canvas = canvas + _render(factor, n, size, spec.texture_family, gen)
    if size != spec.image_size:
        canvas = F.interpolate(canvas, size=(spec.image_size, spec.image_size), mode="nearest")
    canvas = canvas + spec.noise * torch.randn(canvas.shape, generator=gen, dtype=IMAGE_DTYPE)
    return canvas.clamp(0.0, 1.0)


def generate_synthetic(
    spec: TaxonomySpec,
    sample: str = "main",
    images_per_subgroup: Optional[int] = None,
    id_offset: int = 0,
) -> LabeledDataset:
    """Generate a labeled dataset for ``spec``.

    Args:
        spec: Taxonomy to sample from.
        sample: Label of the image draw; different labels give fresh
            images of the same classes.
        images_per_subgroup: Overrides ``spec.images_per_subgroup``.
        id_offset: First example id.

    Returns:
        Examples ordered by subgroup, labeled with their subgroup prompt.
    """
    factors, log = taxonomy_factors(spec)
    per = images_per_subgroup or spec.images_per_subgroup
    gen = torch.Generator().manual_seed(derive_seed(spec.seed, f"images:{sample}"))
    images = []
    for g in range(spec.n_subgroups):
        images.append(render_subgroup(factors[g], per, spec, gen))
    subgroup = torch.arange(spec.n_subgroups).repeat_interleave(per)
    n = subgroup.numel()
    logger.debug("generated %d images (%s, %d shared slots)", n, sample, log.shared_slots)
    return LabeledDataset(
        images=torch.cat(images),
        superclass=subgroup // spec.subgroups_per_superclass,
        subgroup=subgroup,
        style=torch.zeros(n, dtype=torch.long),
        ids=torch.arange(id_offset, id_offset + n),
        prompts=subgroup + spec.n_superclasses,
        taxonomy=spec,
        name=sample,
    )
