"""Training loop shared by the gradient-based baselines.

Only image-tower weights are optimized; the text table and the
BatchNorm running statistics are carried over unchanged.
"""

from __future__ import annotations

import logging
import time
from typing import Callable, Dict, Iterable, Optional

import torch

from ..core.errors import TrainingFailure
from ..core.types import BaselineConfig, StageLog
from ..model.params import ParameterSet
from ..unlearn.remind import trainable_names

logger = logging.getLogger(__name__)

LossFn = Callable[[Dict[str, torch.Tensor], object], torch.Tensor]


def train_image_tower(
    original: ParameterSet,
    batches: Iterable[object],
    loss_fn: LossFn,
    cfg: BaselineConfig,
    log: Optional[StageLog] = None,
) -> ParameterSet:
    """Minimize ``loss_fn(entries, batch)`` over the image tower with Adam.

    Returns:
        The trained parameters tagged ``baseline:<method>``.

    Raises:
        TrainingFailure: If a loss is non-finite.
    """
    start = time.perf_counter()
    names = trainable_names(original.spec)
    entries = original.as_dict()
    leaves = {n: entries[n].clone().requires_grad_(True) for n in names}
    entries.update(leaves)
    optimizer = torch.optim.Adam(list(leaves.values()), lr=cfg.learning_rate)
    stage = f"baseline:{cfg.method}"
    step = -1
    for step, batch in enumerate(batches):
        loss = loss_fn(entries, batch)
        if not torch.isfinite(loss):
            raise TrainingFailure(stage, step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if log is not None:
            log.record(loss.item())
        logger.debug("%s step %d loss %.5f", stage, step, loss.item())
    logger.info("%s: %d steps in %.1fs", stage, step + 1, time.perf_counter() - start)
    if log is not None:
        log.seconds = time.perf_counter() - start
    updates = {n: t.detach() for n, t in leaves.items()}
    return original.replace(updates, provenance=stage, method=cfg.method)


def epochs_of(dataset, batch_size: int, epochs: int, generator: torch.Generator):
    """Shuffled mini-batches for ``epochs`` passes over ``dataset``."""
    for _ in range(epochs):
        yield from dataset.batches(batch_size, generator)
