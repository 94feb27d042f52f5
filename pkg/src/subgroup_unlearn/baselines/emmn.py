"""EMMN: ascend the forget-set loss while descending the retain-set loss."""

from __future__ import annotations

from typing import Optional

import torch

from ..core.types import BaselineConfig, StageLog
from ..data.dataset import cycle_batches
from ..data.split import UnlearnTask
from ..model.dual_encoder import label_space_loss
from ..model.params import ParameterSet
from .common import epochs_of, train_image_tower


def emmn_baseline(
    original: ParameterSet, task: UnlearnTask, cfg: BaselineConfig, log: Optional[StageLog] = None
) -> ParameterSet:
    """Joint objective ``-loss(D^f, coarse) + loss(D^r, retain prompts)``.

    An epoch is one pass over D^r; forget batches are cycled alongside.
    With an empty D^f this is exactly the FT objective and batch order.
    """
    spec = original.spec
    retain_gen = torch.Generator().manual_seed(cfg.seed)
    retain_batches = list(epochs_of(task.retain_set, cfg.batch_size, cfg.epochs, retain_gen))
    if len(task.forget_set):
        forget_gen = torch.Generator().manual_seed(cfg.seed + 1)
        forget_batches = list(cycle_batches(task.forget_set, cfg.batch_size, len(retain_batches), forget_gen))
    else:
        forget_batches = [None] * len(retain_batches)

    def loss_fn(entries, pair):
        retain, forget = pair
        loss = label_space_loss(spec, entries, retain, cfg.retain_prompts)
        if forget is not None:
            loss = loss - torch.clamp(label_space_loss(spec, entries, forget, "coarse"), max=cfg.ga_loss_clip)
        return loss

    return train_image_tower(original, zip(retain_batches, forget_batches), loss_fn, cfg, log)
