"""Relative Fisher information per image-tower layer.

The Fisher score of a layer is the diagonal empirical Fisher of the
image/text objective (mean over examples of squared per-example
gradients), averaged over the layer's parameter entries. The relative
score of a layer is its forget-set Fisher over its retain-set Fisher
plus ``epsilon``; layers with high relative scores are the ones that
carry the forget set specifically.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import torch

from ..core.errors import ConfigurationError
from ..core.types import ModelSpec
from ..data.dataset import LabeledDataset
from ..model.architecture import layer_entries
from ..model.dual_encoder import contrastive_loss, image_embeddings, text_embeddings
from ..model.params import ParameterSet

logger = logging.getLogger(__name__)

OBJECTIVES = ("similarity", "contrastive")


def example_objective(
    spec: ModelSpec,
    entries: Mapping[str, torch.Tensor],
    image: torch.Tensor,
    prompt: int,
    objective: str = "similarity",
) -> torch.Tensor:
    """Scalar objective of one (image, prompt) pair.

    ``similarity`` is the cosine similarity of the paired embeddings;
    ``contrastive`` is the contrastive loss of the image against every
    prompt of its label space (superclass or subgroup prompts).
    """
    img = image_embeddings(spec, entries, image.unsqueeze(0))
    if objective == "similarity":
        txt = text_embeddings(spec, entries, torch.tensor([prompt]))
        return (img * txt).sum()
    n_super = _n_superclasses(spec)
    if prompt < n_super:
        candidates, label = torch.arange(n_super), prompt
    else:
        candidates, label = torch.arange(n_super, len(spec.vocab)), prompt - n_super
    txt = text_embeddings(spec, entries, candidates)
    return contrastive_loss(img, txt, torch.tensor([label]), spec.temperature)


def _n_superclasses(spec: ModelSpec) -> int:
    # superclass prompts come first and contain no "/"
    return sum(1 for p in spec.vocab if "/" not in p)


def per_example_gradients(
    params: ParameterSet,
    dataset: LabeledDataset,
    objective: str = "similarity",
    names: Optional[Sequence[str]] = None,
) -> Iterator[Dict[str, torch.Tensor]]:
    """Yield, per example, the gradient of the objective w.r.t. ``names``.

    ``names`` defaults to every trainable image-tower entry.
    """
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"unknown Fisher objective {objective!r}")
    spec = params.spec
    if names is None:
        names = [n for group in layer_entries(spec).values() for n in group]
    entries = params.as_dict()
    leaves = {n: entries[n].clone().requires_grad_(True) for n in names}
    entries.update(leaves)
    for i in range(len(dataset)):
        value = example_objective(spec, entries, dataset.images[i], int(dataset.prompts[i]), objective)
        grads = torch.autograd.grad(value, [leaves[n] for n in names], allow_unused=True)
        yield {n: (g if g is not None else torch.zeros_like(leaves[n])) for n, g in zip(names, grads)}


def fisher_diagonal(gradients: Iterable[Mapping[str, torch.Tensor]]) -> Dict[str, torch.Tensor]:
    """Mean of squared gradients, entry by entry.

    Raises:
        ConfigurationError: If ``gradients`` is empty.
    """
    total: Dict[str, torch.Tensor] = OrderedDict()
    count = 0
    for grad in gradients:
        count += 1
        for name, g in grad.items():
            sq = g.detach() ** 2
            total[name] = total[name] + sq if name in total else sq
    if count == 0:
        raise ConfigurationError("Fisher information needs at least one example")
    return OrderedDict((name, t / count) for name, t in total.items())


def reduce_layers(diagonal: Mapping[str, torch.Tensor], groups: Mapping[str, Sequence[str]]) -> Dict[str, float]:
    """Mean of the diagonal over all entries of each layer."""
    out: Dict[str, float] = OrderedDict()
    for layer, names in groups.items():
        flat = torch.cat([diagonal[n].reshape(-1) for n in names])
        out[layer] = float(flat.mean())
    return out


def layer_fisher(
    params: ParameterSet,
    dataset: LabeledDataset,
    objective: str = "similarity",
    max_examples: Optional[int] = None,
) -> Dict[str, float]:
    """Per-layer diagonal empirical Fisher of the image/text objective.

    Args:
        params: Model to score.
        dataset: Examples paired with their prompts.
        objective: ``"similarity"`` or ``"contrastive"``.
        max_examples: Use only the first ``max_examples`` examples.

    Raises:
        ConfigurationError: On an empty dataset.
    """
    if len(dataset) == 0:
        raise ConfigurationError(f"cannot compute Fisher information on empty dataset {dataset.name}")
    if max_examples is not None and len(dataset) > max_examples:
        dataset = dataset.subset(torch.arange(max_examples))
    groups = layer_entries(params.spec)
    diagonal = fisher_diagonal(per_example_gradients(params, dataset, objective))
    return reduce_layers(diagonal, groups)


@dataclass(frozen=True)
class LayerScoreMap:
    """Relative Fisher score per image-tower layer, in tower order."""
    scores: Dict[str, float]
    epsilon: float
    objective: str = "similarity"
    forget_fingerprint: str = ""
    retain_fingerprint: str = ""
    forget_fisher: Dict[str, float] = field(default_factory=dict)
    retain_fisher: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = [k for k, v in self.scores.items() if not math.isfinite(v) or v < 0]
        if bad:
            raise ConfigurationError("layer scores must be finite and non-negative", bad)

    def restrict(self, layers: Sequence[str]) -> "LayerScoreMap":
        """Keep only ``layers`` (tower order preserved)."""
        keep = set(layers)
        pick = lambda d: OrderedDict((k, v) for k, v in d.items() if k in keep)  # noqa: E731
        return LayerScoreMap(pick(self.scores), self.epsilon, self.objective, self.forget_fingerprint,
                             self.retain_fingerprint, pick(self.forget_fisher), pick(self.retain_fisher))

    def to_dict(self, selected: Optional[List[str]] = None) -> Dict[str, object]:
        data: Dict[str, object] = {
            "scores": dict(self.scores),
            "epsilon": self.epsilon,
            "objective": self.objective,
            "forget_fingerprint": self.forget_fingerprint,
            "retain_fingerprint": self.retain_fingerprint,
            "forget_fisher": dict(self.forget_fisher),
            "retain_fisher": dict(self.retain_fisher),
        }
        if selected is not None:
            data["selected"] = list(selected)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "LayerScoreMap":
        return cls(
            scores=OrderedDict(data["scores"]),
            epsilon=float(data["epsilon"]),
            objective=str(data.get("objective", "similarity")),
            forget_fingerprint=str(data.get("forget_fingerprint", "")),
            retain_fingerprint=str(data.get("retain_fingerprint", "")),
            forget_fisher=OrderedDict(data.get("forget_fisher", {})),
            retain_fisher=OrderedDict(data.get("retain_fisher", {})),
        )


def ratio_scores(forget: Mapping[str, float], retain: Mapping[str, float], epsilon: float) -> Dict[str, float]:
    return OrderedDict((layer, forget[layer] / (retain[layer] + epsilon)) for layer in forget)


def relative_fisher(
    params: ParameterSet,
    forget_set: LabeledDataset,
    retain_set: LabeledDataset,
    epsilon: float = 1e-8,
    objective: str = "similarity",
    max_examples: Optional[int] = None,
) -> LayerScoreMap:
    """Relative Fisher information ``F_forget / (F_retain + epsilon)`` per layer.

    Raises:
        ConfigurationError: On an empty set or a non-positive ``epsilon``.
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    f_forget = layer_fisher(params, forget_set, objective, max_examples)
    f_retain = layer_fisher(params, retain_set, objective, max_examples)
    scores = ratio_scores(f_forget, f_retain, epsilon)
    logger.info("relative Fisher: %s", ", ".join(f"{k}={v:.3g}" for k, v in scores.items()))
    return LayerScoreMap(
        scores=scores,
        epsilon=epsilon,
        objective=objective,
        forget_fingerprint=forget_set.fingerprint(),
        retain_fingerprint=retain_set.fingerprint(),
        forget_fisher=f_forget,
        retain_fisher=f_retain,
    )


def select_layers(scores: LayerScoreMap, k: int) -> List[str]:
    """The ``k`` highest-scoring layers, descending; ties keep tower order.

    Raises:
        ConfigurationError: If ``k`` is outside ``[1, len(scores)]``.
    """
    layers = list(scores.scores)
    if not 1 <= k <= len(layers):
        raise ConfigurationError(f"k must lie in [1, {len(layers)}], got {k}")
    order = sorted(range(len(layers)), key=lambda i: (-scores.scores[layers[i]], i))
    return [layers[i] for i in order[:k]]
