"""Columnar labeled datasets.

Examples are stored column-wise (one tensor per field) so that subsets,
style transforms and batching stay cheap tensor indexing operations.
Every example carries a stable integer id assigned at generation time;
splits and archives refer to examples by id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import torch

from ..core.errors import ConfigurationError
from ..core.types import TaxonomySpec

IMAGE_DTYPE = torch.float64


@dataclass(frozen=True)
class LabeledExample:
    image: torch.Tensor
    superclass: int
    subgroup: int
    style: int
    example_id: int
    prompt: int


class LabeledDataset:
    """Immutable batch of labeled examples.

    Attributes:
        images: ``(N, C, H, W)`` float64 tensor with values in [0, 1].
        superclass: ``(N,)`` superclass ids.
        subgroup: ``(N,)`` subgroup ids (determine the superclass).
        style: ``(N,)`` style ids, 0 for unstyled images.
        ids: ``(N,)`` unique example ids.
        prompts: ``(N,)`` vocabulary index of the text label paired with
            each image (subgroup prompt unless relabeled).
        taxonomy: Generating taxonomy.
        name: Human-readable name (used in reports and archives).
    """

    def __init__(
        self,
        images: torch.Tensor,
        superclass: torch.Tensor,
        subgroup: torch.Tensor,
        style: torch.Tensor,
        ids: torch.Tensor,
        prompts: torch.Tensor,
        taxonomy: TaxonomySpec,
        name: str = "dataset",
    ) -> None:
        n = images.shape[0]
        for label, col in (("superclass", superclass), ("subgroup", subgroup), ("style", style),
                           ("ids", ids), ("prompts", prompts)):
            if col.shape != (n,):
                raise ConfigurationError(f"column {label} has shape {tuple(col.shape)}, expected ({n},)")
        if images.dim() != 4:
            raise ConfigurationError(f"images must be a (N, C, H, W) tensor, got shape {tuple(images.shape)}")
        if n and not torch.equal(superclass, subgroup // taxonomy.subgroups_per_superclass):
            raise ConfigurationError("subgroup ids are inconsistent with superclass ids")
        self.images = images.to(IMAGE_DTYPE)
        self.superclass = superclass.long()
        self.subgroup = subgroup.long()
        self.style = style.long()
        self.ids = ids.long()
        self.prompts = prompts.long()
        self.taxonomy = taxonomy
        self.name = name

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(
            image=self.images[i],
            superclass=int(self.superclass[i]),
            subgroup=int(self.subgroup[i]),
            style=int(self.style[i]),
            example_id=int(self.ids[i]),
            prompt=int(self.prompts[i]),
        )

    def __repr__(self) -> str:
        return f"LabeledDataset(name={self.name!r}, n={len(self)})"

    def subset(self, index: Union[torch.Tensor, Sequence[int]], name: Optional[str] = None) -> "LabeledDataset":
        """Rows selected by a boolean mask or an integer index."""
        index = torch.as_tensor(index)
        if index.dtype != torch.bool:
            index = index.long()
        return LabeledDataset(
            self.images[index],
            self.superclass[index],
            self.subgroup[index],
            self.style[index],
            self.ids[index],
            self.prompts[index],
            self.taxonomy,
            name or self.name,
        )

    def where(self, mask: torch.Tensor, name: Optional[str] = None) -> "LabeledDataset":
        return self.subset(mask, name)

    def by_ids(self, ids: Sequence[int], name: Optional[str] = None) -> "LabeledDataset":
        """Rows whose example id is in ``ids``, in dataset order."""
        wanted = torch.as_tensor(list(ids), dtype=torch.long)
        return self.subset(torch.isin(self.ids, wanted), name)

    def with_images(self, images: torch.Tensor, style: Optional[int] = None, name: Optional[str] = None) -> "LabeledDataset":
        styles = self.style if style is None else torch.full_like(self.style, style)
        return LabeledDataset(images, self.superclass, self.subgroup, styles, self.ids, self.prompts,
                              self.taxonomy, name or self.name)

    def with_prompts(self, granularity: str, name: Optional[str] = None) -> "LabeledDataset":
        """Relabel every example with its ``"coarse"`` or ``"fine"`` prompt."""
        if granularity == "coarse":
            prompts = self.superclass.clone()
        elif granularity == "fine":
            prompts = self.subgroup + self.taxonomy.n_superclasses
        else:
            raise ConfigurationError(f"prompt granularity must be 'coarse' or 'fine', got {granularity!r}")
        return LabeledDataset(self.images, self.superclass, self.subgroup, self.style, self.ids, prompts,
                              self.taxonomy, name or self.name)

    def labels(self, granularity: str) -> torch.Tensor:
        """Class index of each example within the coarse or fine label space."""
        return self.superclass if granularity == "coarse" else self.subgroup

    def class_prompts(self, granularity: str) -> torch.Tensor:
        """Vocabulary ids of the coarse or fine label space, in class order."""
        if granularity == "coarse":
            return torch.arange(self.taxonomy.n_superclasses)
        return torch.arange(self.taxonomy.n_subgroups) + self.taxonomy.n_superclasses

    def batches(self, batch_size: int, generator: Optional[torch.Generator] = None) -> Iterator["LabeledDataset"]:
        """Shuffled (when ``generator`` is given) mini-batches covering the set once."""
        n = len(self)
        order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
        for start in range(0, n, batch_size):
            yield self.subset(order[start:start + batch_size])

    def fingerprint(self) -> str:
        """SHA-256 over ids, labels and pixel bytes."""
        h = hashlib.sha256()
        for col in (self.ids, self.superclass, self.subgroup, self.style, self.prompts, self.images):
            h.update(col.contiguous().numpy().tobytes())
        return h.hexdigest()


def concat(parts: Sequence[LabeledDataset], name: str) -> LabeledDataset:
    if not parts:
        raise ConfigurationError("cannot concatenate an empty list of datasets")
    return LabeledDataset(
        torch.cat([p.images for p in parts]),
        torch.cat([p.superclass for p in parts]),
        torch.cat([p.subgroup for p in parts]),
        torch.cat([p.style for p in parts]),
        torch.cat([p.ids for p in parts]),
        torch.cat([p.prompts for p in parts]),
        parts[0].taxonomy,
        name,
    )


def cycle_batches(dataset: LabeledDataset, batch_size: int, steps: int, generator: torch.Generator) -> Iterator[LabeledDataset]:
    """``steps`` mini-batches, reshuffling each time the set is exhausted."""
    if len(dataset) == 0 and steps > 0:
        raise ConfigurationError(f"dataset {dataset.name} is empty")
    produced = 0
    while produced < steps:
        for batch in dataset.batches(batch_size, generator):
            if produced >= steps:
                return
            yield batch
            produced += 1
