"""Restoration by merging with the original model, and continuous merging.

``merge_models(theta_f, theta_ori, alpha)`` is the convex combination
``alpha * theta_f + (1 - alpha) * theta_ori`` applied to every entry,
BatchNorm running statistics included. The restoration stage picks
``alpha`` on the calibration set.
"""

from __future__ import annotations

import logging
import time
from typing import List, Optional, Sequence, Tuple

from ..core.errors import ConfigurationError
from ..core.types import StageLog
from ..data.dataset import LabeledDataset
from ..evaluate.metrics import accuracy, recognition_rate
from ..model.params import ParameterSet, combine

logger = logging.getLogger(__name__)


def merge_models(theta_f: ParameterSet, theta_ori: ParameterSet, alpha: float) -> ParameterSet:
    """Elementwise ``alpha * theta_f + (1 - alpha) * theta_ori``.

    Raises:
        ConfigurationError: If ``alpha`` is outside [0, 1].
        MergeError: If the sets are not merge-compatible.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"merge coefficient must lie in [0, 1], got {alpha}")
    theta_f.check_compatible(theta_ori)
    if alpha == 0.0:
        return theta_ori.retag("merged", alpha=0.0)
    if alpha == 1.0:
        return theta_f.retag("merged", alpha=1.0)
    return combine([theta_f, theta_ori], [alpha, 1.0 - alpha], "merged", alpha=float(alpha))


def restore_stage(
    reminded: ParameterSet,
    original: ParameterSet,
    calibration: LabeledDataset,
    grid: Sequence[float],
    forget_set: Optional[LabeledDataset] = None,
    max_forget_ratio: Optional[float] = None,
    margin: float = 0.0,
    tolerance: float = 0.0,
    log: Optional[StageLog] = None,
) -> Tuple[float, ParameterSet]:
    """Pick the merge coefficient with the best calibration accuracy.

    Args:
        reminded: Unlearned model (``theta_f``).
        original: Original model.
        calibration: D_m, scored with zero-shot superclass accuracy.
        grid: Candidate coefficients in [0, 1].
        forget_set: Optional D^f. When given with ``max_forget_ratio``,
            coefficients whose D^f recognition rate (see
            :func:`~subgroup_unlearn.evaluate.metrics.recognition_rate`)
            exceeds ``max_forget_ratio`` times the original's D^f accuracy
            are not eligible (if none is eligible the one with the lowest
            recognition rate is used).
        max_forget_ratio: See ``forget_set``.
        margin: Similarity margin of the D^f recognition rate.
        tolerance: Take the smallest eligible coefficient whose
            calibration accuracy is within ``tolerance`` of the best.
        log: Optional stage log receiving the grid accuracies.

    Returns:
        ``(alpha, merged model tagged restored)``; ties go to the smaller
        coefficient.

    Raises:
        ConfigurationError: On an empty calibration set or grid, or a
            negative ``margin`` or ``tolerance``.
    """
    if len(calibration) == 0:
        raise ConfigurationError("calibration set is empty")
    if not grid:
        raise ConfigurationError("merge grid is empty")
    if margin < 0 or tolerance < 0:
        raise ConfigurationError("restore margin and tolerance must be >= 0")
    start = time.perf_counter()
    guard = forget_set is not None and max_forget_ratio is not None and len(forget_set) > 0
    limit = max_forget_ratio * accuracy(original, forget_set) if guard else None

    rows: List[dict] = []
    for alpha in sorted(set(float(a) for a in grid)):
        merged = merge_models(reminded, original, alpha)
        row = {"alpha": alpha, "calibration_accuracy": accuracy(merged, calibration)}
        if guard:
            row["forget_accuracy"] = accuracy(merged, forget_set)
            row["forget_recognized"] = recognition_rate(merged, forget_set, margin)
            row["eligible"] = row["forget_recognized"] <= limit
        rows.append(row)
        logger.debug("restore alpha=%.2f acc=%.4f", alpha, row["calibration_accuracy"])

    eligible = [r for r in rows if r.get("eligible", True)]
    if eligible:
        # rows are sorted by alpha, so the first row within tolerance has the smallest alpha
        top = max(r["calibration_accuracy"] for r in eligible)
        best = next(r for r in eligible if r["calibration_accuracy"] >= top - tolerance)
    else:
        best = min(rows, key=lambda r: (r["forget_recognized"], r["forget_accuracy"]))
    alpha = best["alpha"]
    restored = merge_models(reminded, original, alpha).retag("restored", alpha=alpha, stage="restore")
    logger.info("restore: alpha=%.2f calibration accuracy %.4f", alpha, best["calibration_accuracy"])
    if log is not None:
        log.values.update(grid=rows, alpha=alpha, guarded=guard, forget_limit=limit, margin=margin,
                          tolerance=tolerance)
        log.seconds = time.perf_counter() - start
    return alpha, restored


def continuous_merge(unlearned: Sequence[ParameterSet], reference: ParameterSet) -> ParameterSet:
    """Uniform average of several unlearned checkpoints.

    Feed it the reminded (unrestored) checkpoints: each restored one
    already sits close to the original, and averaging halves what is
    left of its forgetting.

    Raises:
        ConfigurationError: If ``unlearned`` is empty.
        MergeError: If a checkpoint is incompatible with ``reference``.
    """
    if not unlearned:
        raise ConfigurationError("continuous merge needs at least one checkpoint")
    for params in unlearned:
        reference.check_compatible(params)
    soup = {name: t.clone() for name, t in unlearned[0].items()}
    for params in unlearned[1:]:
        for name in soup:
            soup[name] = soup[name] + params[name]
    n = len(unlearned)
    averaged = {name: t / n for name, t in soup.items()}
    return unlearned[0].replace(averaged, provenance="merged", merged_from=n)
