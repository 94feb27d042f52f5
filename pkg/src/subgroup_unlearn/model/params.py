"""Immutable parameter sets.

A :class:`ParameterSet` is the unit that gets checkpointed, merged,
averaged and scored. Its entries map layer paths (``image.proj.weight``,
``image.blocks.0.bn.running_mean``, ``text.table.weight``...) to float64
tensors; BatchNorm running statistics are entries like any other so
that merges and averages combine them by the same rule.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace as dc_replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import torch

from ..core.errors import ConfigurationError, MergeError
from ..core.types import ModelSpec
from .architecture import DTYPE, parameter_shapes

PROVENANCE_TAGS = ("original", "forgotten", "reminded", "restored", "merged")


def _check_provenance(tag: str) -> None:
    if tag in PROVENANCE_TAGS or tag.startswith("baseline:"):
        return
    raise ConfigurationError(f"unknown provenance tag {tag!r}")


@dataclass(frozen=True)
class ParameterMeta:
    """Metadata carried next to the tensors of a parameter set."""
    spec: ModelSpec
    seed: int
    provenance: str
    extra: Mapping[str, Any] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint()


@dataclass(frozen=True)
class BnStatistics:
    """Running mean/variance per BatchNorm layer, in tower order."""
    layers: Tuple[str, ...]
    means: Tuple[torch.Tensor, ...]
    variances: Tuple[torch.Tensor, ...]

    def __post_init__(self) -> None:
        for layer, var in zip(self.layers, self.variances):
            if not bool((var > 0).all()):
                raise ConfigurationError(f"BN layer {layer} has a non-positive running variance")


class ParameterSet:
    """Ordered mapping layer-path -> tensor plus :class:`ParameterMeta`.

    Tensors are detached float64 copies and are never modified in place;
    every transformation returns a new set.
    """

    __slots__ = ("_entries", "meta")

    def __init__(self, entries: Mapping[str, torch.Tensor], meta: ParameterMeta) -> None:
        _check_provenance(meta.provenance)
        expected = parameter_shapes(meta.spec)
        names = [n for n, _ in expected]
        missing = [n for n in names if n not in entries]
        unknown = [n for n in entries if n not in set(names)]
        if missing or unknown:
            raise MergeError(
                "parameter entries do not match the architecture",
                [f"missing: {n}" for n in missing] + [f"unexpected: {n}" for n in unknown],
            )
        ordered: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        for name, shape in expected:
            tensor = entries[name]
            if tuple(tensor.shape) != shape:
                raise MergeError(f"entry {name} has shape {tuple(tensor.shape)}, expected {shape}")
            ordered[name] = tensor.detach().to(DTYPE).clone()
        self._entries = ordered
        self.meta = meta

    # mapping protocol ------------------------------------------------------
    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterable[Tuple[str, torch.Tensor]]:
        return self._entries.items()

    def names(self) -> List[str]:
        return list(self._entries)

    def as_dict(self) -> Dict[str, torch.Tensor]:
        """Shallow copy of the entries (tensors are shared, do not mutate)."""
        return dict(self._entries)

    @property
    def spec(self) -> ModelSpec:
        return self.meta.spec

    # derived sets ----------------------------------------------------------
    def replace(self, updates: Mapping[str, torch.Tensor], provenance: Optional[str] = None, **extra: Any) -> "ParameterSet":
        """New set with ``updates`` applied and optionally a new provenance tag."""
        entries = dict(self._entries)
        for name, tensor in updates.items():
            if name not in entries:
                raise MergeError(f"unknown entry {name}")
            entries[name] = tensor
        meta = self.meta
        if provenance is not None or extra:
            merged_extra = dict(meta.extra)
            merged_extra.update(extra)
            meta = dc_replace(meta, provenance=provenance or meta.provenance, extra=merged_extra)
        return ParameterSet(entries, meta)

    def retag(self, provenance: str, **extra: Any) -> "ParameterSet":
        return self.replace({}, provenance=provenance, **extra)

    # checks ----------------------------------------------------------------
    def check_compatible(self, other: "ParameterSet") -> None:
        """Raise :class:`MergeError` unless ``other`` can be merged with ``self``."""
        if self.meta.fingerprint != other.meta.fingerprint:
            raise MergeError(
                "architecture fingerprints differ",
                [self.meta.fingerprint[:16], other.meta.fingerprint[:16]],
            )
        for name, tensor in self._entries.items():
            if name not in other or other[name].shape != tensor.shape:
                raise MergeError(f"entry {name} differs in shape")

    def equals(self, other: "ParameterSet") -> bool:
        """Bitwise equality of every entry."""
        if self.names() != other.names():
            return False
        return all(torch.equal(t, other[n]) for n, t in self._entries.items())

    def checksum(self) -> str:
        """SHA-256 over the names and raw bytes of all entries."""
        h = hashlib.sha256()
        for name, tensor in self._entries.items():
            h.update(name.encode("utf-8"))
            h.update(tensor.contiguous().numpy().tobytes())
        return h.hexdigest()

    def bn_statistics(self) -> BnStatistics:
        layers = tuple(self.spec.bn_layers())
        return BnStatistics(
            layers=layers,
            means=tuple(self._entries[f"{l}.running_mean"] for l in layers),
            variances=tuple(self._entries[f"{l}.running_var"] for l in layers),
        )

    def __repr__(self) -> str:
        return f"ParameterSet(provenance={self.meta.provenance!r}, entries={len(self)}, seed={self.meta.seed})"


def combine(sets: List[ParameterSet], weights: List[float], provenance: str, **extra: Any) -> ParameterSet:
    """Elementwise weighted sum of compatible sets, entry by entry."""
    if not sets or len(sets) != len(weights):
        raise ConfigurationError("combine needs one weight per parameter set")
    head = sets[0]
    for other in sets[1:]:
        head.check_compatible(other)
    entries = {}
    for name in head.names():
        acc = weights[0] * sets[0][name]
        for w, s in zip(weights[1:], sets[1:]):
            acc = acc + w * s[name]
        entries[name] = acc
    return ParameterSet(entries, dc_replace(head.meta, provenance=provenance, extra=dict(extra)))
