"""FISHER_NOISE: Gaussian parameter noise scaled by the forget-set Fisher diagonal.

With the ``inverse`` convention the variance of entry ``i`` is
``alpha_var * (F_i + eps) ** -0.5`` (important entries get less noise);
the ``direct`` convention uses ``alpha_var * (F_i + eps) ** 0.5``. The
standard deviation is capped at ``fisher_max_std``.
"""

from __future__ import annotations

import logging
from typing import Dict, Mapping, Optional

import torch

from ..core.types import BaselineConfig, StageLog
from ..data.split import UnlearnTask
from ..model.params import ParameterSet
from ..unlearn.fisher import fisher_diagonal, per_example_gradients

logger = logging.getLogger(__name__)


def noise_std(fisher: torch.Tensor, cfg: BaselineConfig) -> torch.Tensor:
    exponent = -0.5 if cfg.fisher_convention == "inverse" else 0.5
    variance = cfg.alpha_var * (fisher + cfg.fisher_epsilon) ** exponent
    return torch.sqrt(variance).clamp(max=cfg.fisher_max_std)


def sample_fisher_noise(
    fisher: Mapping[str, torch.Tensor], cfg: BaselineConfig, generator: torch.Generator
) -> Dict[str, torch.Tensor]:
    """One zero-mean noise draw per entry of ``fisher``."""
    return {
        name: noise_std(f, cfg) * torch.randn(f.shape, generator=generator, dtype=f.dtype)
        for name, f in fisher.items()
    }


def fisher_noise_baseline(
    original: ParameterSet, task: UnlearnTask, cfg: BaselineConfig, log: Optional[StageLog] = None
) -> ParameterSet:
    """Perturb every image-tower weight once with Fisher-scaled noise."""
    stage = f"baseline:{cfg.method}"
    if cfg.alpha_var == 0:
        return original.retag(stage, method=cfg.method)
    fisher = fisher_diagonal(per_example_gradients(original, task.forget_set, "similarity"))
    gen = torch.Generator().manual_seed(cfg.seed)
    noise = sample_fisher_noise(fisher, cfg, gen)
    updates = {name: original[name] + eps for name, eps in noise.items()}
    if log is not None:
        log.values.update(
            convention=cfg.fisher_convention,
            alpha_var=cfg.alpha_var,
            mean_std={name: float(noise_std(f, cfg).mean()) for name, f in fisher.items()},
        )
    logger.info("%s: perturbed %d entries", stage, len(updates))
    return original.replace(updates, provenance=stage, method=cfg.method)
