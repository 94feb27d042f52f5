"""FT: contrastive fine-tuning of the image tower on the retain set only."""

from __future__ import annotations

from typing import Optional

import torch

from ..core.types import BaselineConfig, StageLog
from ..data.split import UnlearnTask
from ..model.dual_encoder import label_space_loss
from ..model.params import ParameterSet
from .common import epochs_of, train_image_tower


def ft_baseline(
    original: ParameterSet, task: UnlearnTask, cfg: BaselineConfig, log: Optional[StageLog] = None
) -> ParameterSet:
    spec = original.spec
    gen = torch.Generator().manual_seed(cfg.seed)
    batches = epochs_of(task.retain_set, cfg.batch_size, cfg.epochs, gen)
    return train_image_tower(
        original,
        batches,
        lambda entries, batch: label_space_loss(spec, entries, batch, cfg.retain_prompts),
        cfg,
        log,
    )
