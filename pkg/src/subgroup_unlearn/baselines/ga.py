"""GA: gradient ascent of the contrastive loss on the coarse-labeled forget set."""

from __future__ import annotations

from typing import Optional

import torch

from ..core.types import BaselineConfig, StageLog
from ..data.split import UnlearnTask
from ..model.dual_encoder import label_space_loss
from ..model.params import ParameterSet
from .common import epochs_of, train_image_tower


def ga_baseline(
    original: ParameterSet, task: UnlearnTask, cfg: BaselineConfig, log: Optional[StageLog] = None
) -> ParameterSet:
    """Maximize the forget-set loss, clipped at ``cfg.ga_loss_clip``."""
    spec = original.spec
    gen = torch.Generator().manual_seed(cfg.seed)
    batches = epochs_of(task.forget_set, cfg.batch_size, cfg.epochs, gen)

    def loss_fn(entries, batch):
        return -torch.clamp(label_space_loss(spec, entries, batch, "coarse"), max=cfg.ga_loss_clip)

    return train_image_tower(original, batches, loss_fn, cfg, log)
