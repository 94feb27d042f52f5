"""Tests for accuracies, restoration ratios and the aggregate Score."""

from __future__ import annotations

import pytest
import torch

from subgroup_unlearn.core.errors import ConfigurationError, UndefinedBaselineError
from subgroup_unlearn.evaluate.metrics import (
    accuracy,
    aggregate_score,
    prediction_accuracy,
    recognition_rate,
    restoration_ratio,
)


def test_prediction_accuracy():
    assert prediction_accuracy(torch.tensor([0, 1, 1, 0]), torch.tensor([0, 1, 0, 0])) == 0.75
    with pytest.raises(ConfigurationError):
        prediction_accuracy(torch.tensor([], dtype=torch.long), torch.tensor([], dtype=torch.long))


def test_accuracy_lies_in_unit_interval(original, task):
    value = accuracy(original, task.retain_set)
    assert 0.0 <= value <= 1.0
    assert accuracy(original, task.retain_set, "fine") <= 1.0
    with pytest.raises(ConfigurationError):
        accuracy(original, task.retain_set.subset([]))


@pytest.mark.parametrize("granularity", ["coarse", "fine"])
def test_recognition_rate_bounds_accuracy(original, task, granularity):
    dataset = task.eval_suites["all"].dataset
    rate = recognition_rate(original, dataset, 0.0, granularity)
    assert accuracy(original, dataset, granularity) <= rate <= 1.0
    assert recognition_rate(original, dataset, 0.1, granularity) >= rate
    assert recognition_rate(original, dataset, 2.0, granularity) == 1.0


def test_recognition_rate_of_empty_dataset(original, task):
    with pytest.raises(ConfigurationError):
        recognition_rate(original, task.retain_set.subset([]))


def test_restoration_ratio():
    assert restoration_ratio(50.2, 54.7) == pytest.approx(0.917, abs=1e-3)
    assert restoration_ratio(0.8, 0.5) == 1.0
    assert restoration_ratio(0.0, 0.5) == 0.0
    with pytest.raises(UndefinedBaselineError):
        restoration_ratio(0.3, 0.0)


def test_ratio_is_monotone_in_the_unlearned_accuracy():
    values = [restoration_ratio(a / 10, 0.6) for a in range(11)]
    assert values == sorted(values)


def test_aggregate_score_of_published_rows():
    ours = [(0.0, "forget"), (0.917, "retain"), (0.911, "retain"), (1.0, "retain"), (1.0, "retain"),
            (0.886, "retain"), (0.656, "retain")]
    ga = [(0.0, "forget"), (0.016, "retain"), (0.538, "retain"), (0.233, "retain"), (0.376, "retain"),
          (0.688, "retain"), (0.321, "retain")]
    assert aggregate_score(ours) == pytest.approx(91.0, abs=0.05)
    assert aggregate_score(ga) == pytest.approx(45.3, abs=0.05)


def test_aggregate_score_directions():
    assert aggregate_score([(1.0, "forget"), (1.0, "retain")]) == 50.0
    assert aggregate_score([(0.0, "forget")]) == 100.0
    # forgetting less lowers the Score
    assert aggregate_score([(0.2, "forget"), (0.9, "retain")]) < aggregate_score([(0.1, "forget"), (0.9, "retain")])


def test_aggregate_score_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        aggregate_score([])
    with pytest.raises(ConfigurationError):
        aggregate_score([(0.5, "sideways")])
