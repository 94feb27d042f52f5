"""Dispatch from method name to baseline implementation."""

from __future__ import annotations

import logging
from typing import Callable, Dict, Optional

from ..core.errors import ConfigurationError
from ..core.types import BASELINE_METHODS, BaselineConfig, StageLog
from ..data.split import UnlearnTask
from ..model.params import ParameterSet
from .emmn import emmn_baseline
from .fisher_noise import fisher_noise_baseline
from .ft import ft_baseline
from .ga import ga_baseline
from .lip import lip_baseline

logger = logging.getLogger(__name__)

Baseline = Callable[[ParameterSet, UnlearnTask, BaselineConfig, Optional[StageLog]], ParameterSet]

BASELINES: Dict[str, Baseline] = {
    "FT": ft_baseline,
    "GA": ga_baseline,
    "FISHER_NOISE": fisher_noise_baseline,
    "LIP": lip_baseline,
    "EMMN": emmn_baseline,
}
METHODS = BASELINE_METHODS


def run_baseline(
    method: str,
    original: ParameterSet,
    task: UnlearnTask,
    cfg: BaselineConfig,
    log: Optional[StageLog] = None,
) -> ParameterSet:
    """Run ``method`` on ``task``.

    Raises:
        ConfigurationError: If ``method`` is unknown or disagrees with ``cfg``.
    """
    if method not in BASELINES:
        raise ConfigurationError(f"unknown baseline method {method!r}; expected one of {', '.join(METHODS)}")
    if cfg.method != method:
        raise ConfigurationError(f"baseline config is for {cfg.method}, not {method}")
    logger.info("baseline %s: lr %g, %d epochs", method, cfg.learning_rate, cfg.epochs)
    return BASELINES[method](original, task, cfg, log)
