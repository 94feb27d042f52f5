"""Forgetting stage.

Low-rank adapters are attached to the selected layers and trained to
minimise the mean cosine similarity between forget-set image embeddings
and the embedding of their coarse (superclass) prompt. The adapters are
folded back so later stages work on a flat parameter set.

With ``stop_accuracy`` set, training ends as soon as the share of D^f
still recognized within ``recognition_margin`` falls to it; the check
runs before every step.
"""

from __future__ import annotations

import logging
import time
from typing import Mapping, Optional, Sequence

import torch

from ..core.errors import ConfigurationError, TrainingFailure
from ..core.types import AdapterConfig, ModelSpec, StageConfig, StageLog
from ..data.dataset import LabeledDataset, cycle_batches
from ..data.split import UnlearnTask
from ..evaluate.metrics import recognition_rate
from ..model.dual_encoder import encode_image, encode_text, image_embeddings, text_embeddings
from ..model.params import ParameterSet
from .adapters import attach_adapters, fold_adapters

logger = logging.getLogger(__name__)


def paired_similarity(params: ParameterSet, dataset: LabeledDataset) -> float:
    """Mean cosine similarity of each image with its paired prompt."""
    if len(dataset) == 0:
        raise ConfigurationError(f"dataset {dataset.name} is empty")
    img = encode_image(params, dataset.images)
    txt = encode_text(params, dataset.prompts)
    return float((img * txt).sum(dim=1).mean())


def forget_similarity(spec: ModelSpec, entries: Mapping[str, torch.Tensor], batch: LabeledDataset) -> torch.Tensor:
    """Mean cosine similarity of a batch with its paired (superclass) prompts, differentiable."""
    img = image_embeddings(spec, entries, batch.images)
    txt = text_embeddings(spec, entries, batch.prompts)
    return (img * txt).sum(dim=1).mean()


def forget_stage(
    original: ParameterSet,
    task: UnlearnTask,
    selected_layers: Sequence[str],
    cfg: StageConfig,
    adapters: AdapterConfig = AdapterConfig(),
    log: Optional[StageLog] = None,
) -> ParameterSet:
    """Erase the forget set's association with its superclass prompt.

    Args:
        original: Model to unlearn from.
        task: Provides the coarse-labeled forget set D^f.
        selected_layers: Layers receiving adapters.
        cfg: Learning rate, steps, batch size and seed.
        adapters: Rank, scaling and initialization scale.
        log: Optional stage log receiving per-step losses.

    Returns:
        The folded model tagged ``forgotten``.

    Raises:
        ConfigurationError: If no layer is selected or D^f is empty.
        TrainingFailure: If the loss becomes non-finite.
    """
    if not selected_layers:
        raise ConfigurationError("forget stage needs at least one selected layer")
    forget_set = task.forget_set
    if len(forget_set) == 0:
        raise ConfigurationError("forget set is empty")
    start = time.perf_counter()
    before = paired_similarity(original, forget_set)
    model = attach_adapters(original, selected_layers, adapters.rank, adapters.scaling, adapters.init_std, cfg.seed)
    spec = original.spec
    optimizer = torch.optim.Adam(model.trainable(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    logger.info("forget: %d steps on %d examples, layers %s", cfg.steps, len(forget_set), list(selected_layers))
    taken, recognized = 0, None
    for step, batch in enumerate(cycle_batches(forget_set, cfg.batch_size, cfg.steps, gen)):
        if cfg.stop_accuracy is not None:
            recognized = recognition_rate(fold_adapters(model), forget_set, cfg.recognition_margin)
            if recognized <= cfg.stop_accuracy:
                logger.info("forget: stopping at step %d, D^f recognized %.3f", step, recognized)
                break
        loss = forget_similarity(spec, model.entries(), batch)
        if not torch.isfinite(loss):
            raise TrainingFailure("forget", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if log is not None:
            log.record(loss.item())
        taken = step + 1
        logger.debug("forget step %d similarity %.5f", step, loss.item())
    forgotten = fold_adapters(model).retag("forgotten", stage="forget")
    after = paired_similarity(forgotten, forget_set)
    logger.info("forget: mean similarity on D^f %.4f -> %.4f", before, after)
    if log is not None:
        log.values.update(selected_layers=list(selected_layers), similarity_before=before, similarity_after=after,
                          steps_taken=taken, adapters=model.describe())
        if recognized is not None:
            log.values["recognized"] = recognized
        log.seconds = time.perf_counter() - start
    return forgotten
