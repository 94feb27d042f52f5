"""Ablation sweeps over the reminding length and the merge weight.

Rows report accuracies in percent on the target suite (``acc_f``), the
sibling suite (``acc_r``), the in-domain non-target suite (``acc_in``)
and the mean over the out-of-domain suites (``acc_unseen``), plus the
Score. ``weight`` is the restoration weight, the share of the original
model in the merge.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

from ..core.errors import ConfigurationError
from ..core.types import RunConfig
from ..data.split import UnlearnTask
from ..evaluate.report import EvalReport, build_report, percent
from ..model.params import ParameterSet
from .forget import forget_stage
from .pipeline import choose_layers
from .remind import remind_stage
from .restore import merge_models, restore_stage

logger = logging.getLogger(__name__)

IN_DOMAIN_SUITES = ("target", "retain", "all")
SWEEP_COLUMNS = ("value", "weight", "acc_f", "acc_r", "acc_in", "acc_unseen", "score")


def _acc(report: EvalReport, name: str) -> Optional[float]:
    try:
        return percent(report.suite(name).acc_unlearn)
    except KeyError:
        return None


def ablation_row(value: float, weight: float, report: EvalReport) -> Dict[str, Any]:
    unseen = [s.acc_unlearn for s in report.suites if s.suite not in IN_DOMAIN_SUITES]
    return {
        "value": value,
        "weight": round(weight, 6),
        "acc_f": _acc(report, "target"),
        "acc_r": _acc(report, "retain"),
        "acc_in": _acc(report, "all"),
        "acc_unseen": percent(sum(unseen) / len(unseen)) if unseen else None,
        "score": round(report.score, 1),
    }


def _forgotten(original: ParameterSet, task: UnlearnTask, cfg: RunConfig):
    _, selected = choose_layers(original, task, cfg)
    return selected, forget_stage(original, task, selected, cfg.forget, cfg.adapters)


def sweep_remind_steps(
    original: ParameterSet, task: UnlearnTask, cfg: RunConfig, values: Sequence[int]
) -> List[Dict[str, Any]]:
    """Rerun reminding and restoring for each step count (ascending).

    Selection and forgetting run once. The merge uses
    ``cfg.sweep.fixed_alpha`` when set, otherwise the calibration search.
    """
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    selected, forgotten = _forgotten(original, task, cfg)
    fixed = cfg.sweep.fixed_alpha
    rows = []
    for steps in sorted(set(int(v) for v in values)):
        reminded = remind_stage(forgotten, original, task, replace(cfg.remind, steps=steps), selected)
        if fixed is not None:
            restored = merge_models(reminded, original, 1.0 - fixed)
            weight = fixed
        else:
            guard = cfg.restore.max_forget_ratio is not None
            alpha, restored = restore_stage(reminded, original, task.calibration_set, cfg.restore.merge_grid,
                                            task.forget_set if guard else None, cfg.restore.max_forget_ratio,
                                            cfg.restore.recognition_margin, cfg.restore.calibration_tolerance)
            weight = 1.0 - alpha
        rows.append(ablation_row(steps, weight, build_report(original, restored, task)))
        logger.info("sweep remind_steps=%d: Score %.1f", steps, rows[-1]["score"])
    return rows


def sweep_alpha_merge(
    original: ParameterSet,
    task: UnlearnTask,
    cfg: RunConfig,
    values: Sequence[float],
    reminded: Optional[ParameterSet] = None,
) -> List[Dict[str, Any]]:
    """Merge one reminded model with the original at each restoration weight (ascending).

    ``reminded`` skips selection, forgetting and reminding when the
    caller already ran them.
    """
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    weights = sorted(set(float(v) for v in values))
    if any(not 0.0 <= w <= 1.0 for w in weights):
        raise ConfigurationError("restoration weights must lie in [0, 1]")
    if reminded is None:
        selected, forgotten = _forgotten(original, task, cfg)
        reminded = remind_stage(forgotten, original, task, cfg.remind, selected)
    rows = []
    for w in weights:
        merged = merge_models(reminded, original, 1.0 - w)
        rows.append(ablation_row(w, w, build_report(original, merged, task)))
        logger.info("sweep weight=%.2f: Score %.1f", w, rows[-1]["score"])
    return rows
