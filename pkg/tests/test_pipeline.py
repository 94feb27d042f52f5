"""Tests for the forget -> remind -> restore pipeline and the ablation sweeps."""

from __future__ import annotations

from dataclasses import replace

import pytest

from subgroup_unlearn.core.errors import ConfigurationError
from subgroup_unlearn.core.types import SweepConfig
from subgroup_unlearn.evaluate.report import build_report
from subgroup_unlearn.unlearn.pipeline import run_pipeline
from subgroup_unlearn.unlearn.restore import merge_models
from subgroup_unlearn.unlearn.sweep import SWEEP_COLUMNS, sweep_alpha_merge, sweep_remind_steps


@pytest.fixture(scope="module")
def cfg(tiny_config):
    return tiny_config


@pytest.fixture(scope="module")
def result(original, task, cfg):
    return run_pipeline(original, task, cfg)


def test_pipeline_outputs(original, result, cfg):
    assert result.selected and len(result.selected) == 1
    assert result.alpha in cfg.restore.merge_grid
    assert result.forgotten.meta.provenance == "forgotten"
    assert result.reminded.meta.provenance == "reminded"
    assert result.restored.meta.provenance == "restored"
    assert set(result.logs) == {"selection", "forget", "remind", "restore"}
    assert result.logs["selection"].values["selected"] == result.selected
    assert result.restored.equals(merge_models(result.reminded, original, result.alpha))


def test_pipeline_is_deterministic(original, task, cfg, result):
    again = run_pipeline(original, task, cfg)
    assert again.selected == result.selected
    assert again.restored.checksum() == result.restored.checksum()


def test_alpha_sweep_rows(original, task, cfg):
    rows = sweep_alpha_merge(original, task, cfg, [1.0, 0.0, 0.5])
    assert [r["weight"] for r in rows] == [0.0, 0.5, 1.0]
    assert all(tuple(r) == SWEEP_COLUMNS for r in rows)
    # full restoration weight is the original model: every ratio is 1
    assert rows[-1]["score"] == 75.0
    assert rows[-1]["acc_unseen"] is not None


def test_alpha_sweep_rejects_bad_values(original, task, cfg):
    with pytest.raises(ConfigurationError):
        sweep_alpha_merge(original, task, cfg, [])
    with pytest.raises(ConfigurationError):
        sweep_alpha_merge(original, task, cfg, [0.5, 1.5])


def test_remind_sweep_with_fixed_weight(original, task, cfg):
    rows = sweep_remind_steps(original, task, cfg, [2, 1, 2])
    assert [r["value"] for r in rows] == [1, 2]
    assert all(r["weight"] == cfg.sweep.fixed_alpha for r in rows)


def test_single_value_sweep_matches_a_plain_run(original, task, cfg, result):
    searched = replace(cfg, sweep=SweepConfig(fixed_alpha=None))
    (row,) = sweep_remind_steps(original, task, searched, [cfg.remind.steps])
    assert row["weight"] == round(1.0 - result.alpha, 6)
    assert row["score"] == round(build_report(original, result.restored, task).score, 1)
