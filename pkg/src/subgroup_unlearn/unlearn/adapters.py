"""Low-rank adapters on selected image-tower layers.

An adapted layer computes with ``W + scaling * (A @ B).view_as(W)``
where ``A`` is ``d_out x r`` (zero at attach time) and ``B`` is
``r x d_in``. Convolution kernels are adapted through their unrolled
``(out_channels, in_channels * k * k)`` matrix view. Only ``A`` and ``B``
are trainable; base entries are never modified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import torch

from ..core.errors import ConfigurationError, MergeError
from ..model import checkpoint
from ..model.architecture import DTYPE
from ..model.params import ParameterSet
from ..store.artifacts import atomic_write_bytes

logger = logging.getLogger(__name__)


@dataclass
class LowRankAdapter:
    A: torch.Tensor
    B: torch.Tensor
    scaling: float

    def delta(self, shape: torch.Size) -> torch.Tensor:
        return self.scaling * (self.A @ self.B).view(shape)


class AdaptedModel:
    """Frozen base parameters plus trainable low-rank adapters."""

    def __init__(self, base: ParameterSet, adapters: Dict[str, LowRankAdapter], rank: int) -> None:
        self.base = base
        self.adapters = adapters
        self.rank = rank

    @property
    def layer_paths(self) -> List[str]:
        return list(self.adapters)

    @property
    def scaling(self) -> float:
        return next(iter(self.adapters.values())).scaling if self.adapters else 1.0

    def trainable(self) -> List[torch.Tensor]:
        out: List[torch.Tensor] = []
        for adapter in self.adapters.values():
            out.extend([adapter.A, adapter.B])
        return out

    def entries(self) -> Dict[str, torch.Tensor]:
        """Base entries with every adapted weight replaced (differentiable in A, B)."""
        entries = self.base.as_dict()
        for layer, adapter in self.adapters.items():
            name = f"{layer}.weight"
            entries[name] = entries[name] + adapter.delta(entries[name].shape)
        return entries

    def describe(self) -> Dict[str, object]:
        return {"layer_paths": self.layer_paths, "rank": self.rank, "scaling": self.scaling}


def matrix_shape(weight: torch.Tensor) -> Tuple[int, int]:
    return int(weight.shape[0]), int(weight[0].numel())


def attach_adapters(
    base: ParameterSet,
    layer_paths: Sequence[str],
    rank: int,
    scaling: float = 1.0,
    init_std: float = 0.01,
    seed: int = 0,
) -> AdaptedModel:
    """Attach zero-start adapters to ``layer_paths``.

    Raises:
        ConfigurationError: If a path does not name a weight matrix or
            ``rank`` is not below both matrix dimensions.
    """
    matrices = set(base.spec.matrix_layers())
    if rank < 1:
        raise ConfigurationError(f"adapter rank must be >= 1, got {rank}")
    gen = torch.Generator().manual_seed(seed)
    adapters: Dict[str, LowRankAdapter] = {}
    for layer in layer_paths:
        if layer not in matrices:
            raise ConfigurationError(f"{layer} is not a weight matrix and cannot carry an adapter")
        d_out, d_in = matrix_shape(base[f"{layer}.weight"])
        if rank >= min(d_out, d_in):
            raise ConfigurationError(f"adapter rank {rank} must be below min({d_out}, {d_in}) for {layer}")
        A = torch.zeros(d_out, rank, dtype=DTYPE, requires_grad=True)
        B = (init_std * torch.randn(rank, d_in, generator=gen, dtype=DTYPE)).requires_grad_(True)
        adapters[layer] = LowRankAdapter(A, B, float(scaling))
    logger.debug("attached rank-%d adapters to %s", rank, ", ".join(layer_paths))
    return AdaptedModel(base, adapters, rank)


def fold_adapters(model: AdaptedModel) -> ParameterSet:
    """Fold the adapters into the base weights."""
    with torch.no_grad():
        entries = model.entries()
    updates = {f"{layer}.weight": entries[f"{layer}.weight"].detach() for layer in model.adapters}
    return model.base.replace(updates, adapters=model.describe())


def save_adapted(model: AdaptedModel, path: Union[str, Path]) -> Path:
    """Checkpoint the base entries plus ``adapter.<layer>.A|B`` records."""
    header = checkpoint.checkpoint_header(model.base)
    header["adapters"] = model.describe()
    records = list(model.base.items())
    for layer, adapter in model.adapters.items():
        records.append((f"adapter.{layer}.A", adapter.A.detach()))
        records.append((f"adapter.{layer}.B", adapter.B.detach()))
    return atomic_write_bytes(Path(path), checkpoint.encode(header, records))


def load_adapted(path: Union[str, Path]) -> AdaptedModel:
    header, records = checkpoint.decode(Path(path).read_bytes())
    if "adapters" not in header:
        raise MergeError(f"{path} holds no adapters")
    base = checkpoint.params_from(header, records)
    tensors = dict(records)
    block = header["adapters"]
    adapters = {}
    for layer in block["layer_paths"]:
        A = tensors[f"adapter.{layer}.A"].clone().requires_grad_(True)
        B = tensors[f"adapter.{layer}.B"].clone().requires_grad_(True)
        adapters[layer] = LowRankAdapter(A, B, float(block["scaling"]))
    return AdaptedModel(base, adapters, int(block["rank"]))
