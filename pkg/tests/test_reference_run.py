"""Desk-scale checks on the reference benchmark (configs/default-1.0.yaml).

Every test here pre-trains and unlearns at full reference size, so the
module is marked slow and deselected by default; run it with
``pytest -m slow tests/test_reference_run.py``.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import pytest
import torch

from subgroup_unlearn.baselines.registry import run_baseline
from subgroup_unlearn.cli import build_task
from subgroup_unlearn.core.config import load_config
from subgroup_unlearn.core.types import BASELINE_METHODS, StageLog
from subgroup_unlearn.data.dataset import concat
from subgroup_unlearn.data.split import evaluation_draw
from subgroup_unlearn.data.synthetic import generate_synthetic
from subgroup_unlearn.evaluate.metrics import accuracy
from subgroup_unlearn.evaluate.report import build_report, class_suites, report_from_suites
from subgroup_unlearn.evaluate.retrieval import retrieval_summary
from subgroup_unlearn.model.dual_encoder import pretrain_toy
from subgroup_unlearn.unlearn.pipeline import run_pipeline
from subgroup_unlearn.unlearn.restore import continuous_merge
from subgroup_unlearn.unlearn.sweep import IN_DOMAIN_SUITES, sweep_alpha_merge

PROJECT_ROOT = Path(__file__).resolve().parents[1]

pytestmark = pytest.mark.slow


def _unseen_ratio(report):
    ratios = [s.ratio for s in report.suites if s.suite not in IN_DOMAIN_SUITES]
    return sum(ratios) / len(ratios)


@pytest.fixture(scope="module")
def reference_cfg():
    return load_config(PROJECT_ROOT / "configs" / "default-1.0.yaml")


@pytest.fixture(scope="module")
def reference_original(reference_cfg):
    data = generate_synthetic(reference_cfg.taxonomy, sample="pretrain")
    return pretrain_toy(reference_cfg.model, data, reference_cfg.pretrain)


@pytest.fixture(scope="module")
def reference_task(reference_cfg):
    return build_task(reference_cfg)


@pytest.fixture(scope="module")
def reference_result(reference_cfg, reference_original, reference_task):
    return run_pipeline(reference_original, reference_task, reference_cfg)


@pytest.fixture(scope="module")
def reference_report(reference_original, reference_task, reference_result):
    return build_report(reference_original, reference_result.restored, reference_task)


@pytest.fixture(scope="module")
def baselines(reference_cfg, reference_original, reference_task):
    """Checkpoint, stage log and report of every baseline."""
    out = {}
    for method in BASELINE_METHODS:
        log = StageLog(f"baseline:{method}")
        params = run_baseline(method, reference_original, reference_task, reference_cfg.baseline(method), log)
        out[method] = (params, log, build_report(reference_original, params, reference_task))
    return out


def test_linear_readout_separates_subgroups(reference_cfg):
    """Ridge regression on raw pixels, scored on a fresh draw."""
    taxonomy = reference_cfg.taxonomy
    train = generate_synthetic(taxonomy)
    test = evaluation_draw(taxonomy, 50)

    def features(ds):
        flat = ds.images.reshape(len(ds), -1)
        return torch.cat([flat, torch.ones(len(ds), 1, dtype=flat.dtype)], dim=1)

    x = features(train)
    y = torch.nn.functional.one_hot(train.subgroup, taxonomy.n_subgroups).to(x.dtype)
    weights = torch.linalg.solve(x.T @ x + 1e-2 * torch.eye(x.shape[1], dtype=x.dtype), x.T @ y)
    predictions = (features(test) @ weights).argmax(dim=1)
    assert float((predictions == test.subgroup).double().mean()) >= 0.9


def test_pretrained_model_classifies_held_out_images(reference_cfg, reference_original):
    held_out = evaluation_draw(reference_cfg.taxonomy, reference_cfg.eval.images_per_subgroup)
    assert accuracy(reference_original, held_out) >= 0.85


def test_forgetting_suppresses_the_target(reference_original, reference_task, reference_result):
    target = reference_task.eval_suites["target"].dataset
    assert accuracy(reference_original, target) > 0.10
    assert accuracy(reference_result.forgotten, target) <= 0.10


def test_pipeline_forgets_the_target_and_keeps_the_rest(reference_report):
    assert reference_report.suite("target").ratio <= 0.10
    assert reference_report.suite("retain").ratio >= 0.80
    assert _unseen_ratio(reference_report) >= 0.70


def test_pipeline_outscores_every_baseline(reference_report, baselines):
    for method, (_, _, report) in baselines.items():
        assert reference_report.score > report.score, method


def test_gradient_ascent_collapses_unseen_suites(reference_report, baselines):
    _, _, report = baselines["GA"]
    assert _unseen_ratio(report) < _unseen_ratio(reference_report)


def test_emmn_lowers_target_accuracy(reference_original, reference_task, baselines):
    params, _, _ = baselines["EMMN"]
    target = reference_task.eval_suites["target"].dataset
    assert accuracy(params, target) < accuracy(reference_original, target)


def test_fine_tuning_keeps_retain_accuracy(reference_original, reference_task, baselines):
    params, _, _ = baselines["FT"]
    retain = reference_task.retain_set
    assert accuracy(params, retain, "fine") >= accuracy(reference_original, retain, "fine")


def test_lip_loss_decreases(baselines):
    _, log, _ = baselines["LIP"]
    losses = log.losses
    assert len(losses) >= 10
    assert sum(losses[-5:]) / 5 < sum(losses[:5]) / 5


def test_restored_model_stops_retrieving_the_target(reference_original, reference_task, reference_result,
                                                    reference_cfg):
    suites = reference_task.eval_suites
    gallery = concat([suites["target"].dataset, suites["retain"].dataset], "gallery")
    prompt = reference_task.taxonomy.superclass_prompt(reference_task.target_superclass)
    summary = retrieval_summary({"original": reference_original, "restored": reference_result.restored}, gallery,
                                prompt, suites["target"].dataset.ids.tolist(), reference_cfg.eval.retrieval_k)
    models = summary["models"]
    assert models["restored"]["hit_rate"] < models["original"]["hit_rate"]


def test_merge_weight_sweep_is_directional(reference_cfg, reference_original, reference_task, reference_result):
    rows = sweep_alpha_merge(reference_original, reference_task, reference_cfg, reference_cfg.sweep.alpha_merge,
                             reminded=reference_result.reminded)
    # percentage points
    slack = 2.0
    for before, after in zip(rows, rows[1:]):
        assert after["acc_f"] >= before["acc_f"] - slack
        assert after["acc_r"] >= before["acc_r"] - slack
    assert rows[-1]["acc_f"] > rows[0]["acc_f"]


def test_merging_two_unlearned_models_suppresses_both_targets(reference_cfg, reference_original, reference_result):
    second_cfg = replace(reference_cfg, task=replace(reference_cfg.task, target_subgroup=5))
    second = run_pipeline(reference_original, build_task(second_cfg), second_cfg)
    merged = continuous_merge([reference_result.reminded, second.reminded], reference_original)
    data = generate_synthetic(reference_cfg.taxonomy, sample="continuous",
                              images_per_subgroup=reference_cfg.eval.images_per_subgroup)
    report = report_from_suites(reference_original, merged, class_suites(data, [0, 5]))
    names = reference_cfg.taxonomy.subgroup_names()
    assert report.suite(names[0]).ratio <= 0.25
    assert report.suite(names[5]).ratio <= 0.25
    retained = [s.ratio for s in report.suites if s.direction == "retain"]
    assert sum(retained) / len(retained) >= 0.5
