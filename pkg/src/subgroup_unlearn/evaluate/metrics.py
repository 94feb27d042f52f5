"""Evaluation metrics.

``restoration_ratio`` and ``aggregate_score`` work on plain numbers so
that they can be checked against published tables; ``accuracy`` runs
zero-shot classification of a labeled dataset.
"""

from __future__ import annotations

from typing import Iterable, Tuple

import torch

from ..core.errors import ConfigurationError, UndefinedBaselineError
from ..data.dataset import LabeledDataset
from ..data.split import FORGET, RETAIN
from ..model.dual_encoder import zero_shot_classify
from ..model.params import ParameterSet


def prediction_accuracy(predictions: torch.Tensor, labels: torch.Tensor) -> float:
    if labels.numel() == 0:
        raise ConfigurationError("accuracy of an empty dataset is undefined")
    return float((predictions == labels).double().mean())


def accuracy(params: ParameterSet, dataset: LabeledDataset, granularity: str = "coarse") -> float:
    """Fraction of ``dataset`` classified correctly among the ``granularity`` prompts.

    Raises:
        ConfigurationError: If ``dataset`` is empty.
    """
    if len(dataset) == 0:
        raise ConfigurationError(f"accuracy of empty dataset {dataset.name} is undefined")
    predictions, _ = zero_shot_classify(params, dataset.images, dataset.class_prompts(granularity))
    return prediction_accuracy(predictions, dataset.labels(granularity))


def recognition_rate(
    params: ParameterSet,
    dataset: LabeledDataset,
    margin: float = 0.0,
    granularity: str = "coarse",
) -> float:
    """Fraction of ``dataset`` whose true class scores within ``margin`` of the best other class.

    With ``margin`` 0 this counts ties as recognized, so it never falls
    below :func:`accuracy`. A positive margin also counts the examples
    that are only narrowly misclassified.
    """
    if len(dataset) == 0:
        raise ConfigurationError(f"recognition rate of empty dataset {dataset.name} is undefined")
    _, sims = zero_shot_classify(params, dataset.images, dataset.class_prompts(granularity))
    labels = dataset.labels(granularity)
    true = sims.gather(1, labels.reshape(-1, 1)).reshape(-1)
    if sims.shape[1] == 1:
        return 1.0
    others = sims.scatter(1, labels.reshape(-1, 1), float("-inf")).max(dim=1).values
    return float((true >= others - margin).double().mean())


def restoration_ratio(acc_unlearn: float, acc_ori: float) -> float:
    """``min(acc_unlearn / acc_ori, 1)``.

    Raises:
        UndefinedBaselineError: If ``acc_ori`` is not positive.
    """
    if acc_ori <= 0:
        raise UndefinedBaselineError(f"restoration ratio undefined for original accuracy {acc_ori}")
    return min(acc_unlearn / acc_ori, 1.0)


def aggregate_score(entries: Iterable[Tuple[float, str]]) -> float:
    """Directional mean of ratios on a 0-100 scale.

    Retain-direction entries contribute their ratio, forget-direction
    entries contribute ``1 - ratio``.
    """
    values = []
    for ratio, direction in entries:
        if direction == FORGET:
            values.append(1.0 - ratio)
        elif direction == RETAIN:
            values.append(ratio)
        else:
            raise ConfigurationError(f"unknown direction {direction!r}")
    if not values:
        raise ConfigurationError("aggregate score needs at least one entry")
    return 100.0 * sum(values) / len(values)
