"""Prompt-based retrieval over a gallery of images."""

from __future__ import annotations

from typing import Dict, Iterable, List, Sequence

import torch

from ..core.errors import ConfigurationError
from ..data.dataset import LabeledDataset
from ..model.dual_encoder import encode_image, encode_text
from ..model.params import ParameterSet


def retrieve(params: ParameterSet, prompt_id: int, gallery: LabeledDataset, k: int) -> List[int]:
    """Ids of the ``k`` gallery images most similar to a prompt.

    Images are ranked by descending cosine similarity to the prompt
    embedding; equal similarities are ordered by example id, so the
    ranking does not depend on the gallery order.

    Raises:
        ConfigurationError: If ``k`` is not in ``[1, len(gallery)]``.
    """
    if not 1 <= k <= len(gallery):
        raise ConfigurationError(f"retrieval k must lie in [1, {len(gallery)}], got {k}")
    by_id = torch.argsort(gallery.ids, stable=True)
    ids = gallery.ids[by_id]
    sims = encode_image(params, gallery.images[by_id]) @ encode_text(params, [prompt_id])[0]
    _, order = torch.sort(-sims, stable=True)
    return ids[order[:k]].tolist()


def hit_rate(ranking: Sequence[int], positives: Iterable[int], k: int) -> float:
    """Fraction of the top ``k`` of ``ranking`` that are in ``positives``."""
    if not 1 <= k <= len(ranking):
        raise ConfigurationError(f"hit rate k must lie in [1, {len(ranking)}], got {k}")
    wanted = set(int(p) for p in positives)
    return sum(1 for i in ranking[:k] if int(i) in wanted) / k


def retrieval_dump(
    params: ParameterSet, gallery: LabeledDataset, prompt_ids: Sequence[int], k: int
) -> Dict[str, List[int]]:
    """Ranked ids per prompt, keyed by the prompt string."""
    vocab = params.spec.vocab
    k = min(k, len(gallery))
    return {vocab[p]: retrieve(params, p, gallery, k) for p in prompt_ids}


def retrieval_summary(
    models: Dict[str, ParameterSet], gallery: LabeledDataset, prompt_id: int, positives: Sequence[int], k: int
) -> Dict[str, object]:
    """Ranking and top-k hit rate of ``positives`` for one prompt under each model."""
    k = min(k, len(gallery))
    summary: Dict[str, object] = {"k": k, "positives": [int(p) for p in positives], "models": {}}
    for label, params in models.items():
        prompt, ranking = next(iter(retrieval_dump(params, gallery, [prompt_id], k).items()))
        summary["prompt"] = prompt
        summary["models"][label] = {"ranking": ranking, "hit_rate": hit_rate(ranking, positives, k)}
    return summary
