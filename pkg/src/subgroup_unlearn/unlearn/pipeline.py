"""Forget -> remind -> restore pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..core.types import RunConfig, StageConfig, StageLog
from ..data.split import UnlearnTask
from ..model.params import ParameterSet
from .fisher import LayerScoreMap, relative_fisher, select_layers
from .forget import forget_stage
from .remind import remind_stage
from .restore import restore_stage

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    scores: LayerScoreMap
    selected: List[str]
    forgotten: ParameterSet
    reminded: ParameterSet
    restored: ParameterSet
    alpha: float
    logs: Dict[str, StageLog] = field(default_factory=dict)


def choose_layers(original: ParameterSet, task: UnlearnTask, cfg: RunConfig) -> Tuple[LayerScoreMap, List[str]]:
    """Score every image-tower layer and select among the weight matrices."""
    sel = cfg.selection
    scores = relative_fisher(original, task.forget_set, task.retain_set, sel.epsilon, sel.objective,
                             sel.max_examples)
    candidates = scores.restrict(original.spec.matrix_layers())
    k = sel.resolve_k(len(candidates.scores))
    return scores, select_layers(candidates, k)


def run_pipeline(
    original: ParameterSet,
    task: UnlearnTask,
    cfg: RunConfig,
    remind_cfg: Optional[StageConfig] = None,
    restore_cfg: Optional[StageConfig] = None,
) -> PipelineResult:
    """Run the three stages in order, each consuming the previous output.

    ``remind_cfg`` and ``restore_cfg`` override the configured stages
    (used by the ablation sweeps).
    """
    remind_cfg = remind_cfg or cfg.remind
    restore_cfg = restore_cfg or cfg.restore
    logs = {name: StageLog(name) for name in ("selection", "forget", "remind", "restore")}

    scores, selected = choose_layers(original, task, cfg)
    logs["selection"].values.update(selected=selected, scores=dict(scores.scores))
    logger.info("selected layers: %s", ", ".join(selected))

    forgotten = forget_stage(original, task, selected, cfg.forget, cfg.adapters, logs["forget"])
    reminded = remind_stage(forgotten, original, task, remind_cfg, selected, logs["remind"])
    guard = restore_cfg.max_forget_ratio is not None
    alpha, restored = restore_stage(
        reminded,
        original,
        task.calibration_set,
        restore_cfg.merge_grid,
        forget_set=task.forget_set if guard else None,
        max_forget_ratio=restore_cfg.max_forget_ratio,
        margin=restore_cfg.recognition_margin,
        tolerance=restore_cfg.calibration_tolerance,
        log=logs["restore"],
    )
    return PipelineResult(scores, selected, forgotten, reminded, restored, alpha, logs)
