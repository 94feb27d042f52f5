"""Tests for unlearning task construction and dataset archives."""

from __future__ import annotations

from dataclasses import replace

import pytest
import torch

from subgroup_unlearn.core.errors import ConfigurationError
from subgroup_unlearn.core.types import SplitFractions, TaxonomySpec
from subgroup_unlearn.data.archive import load_task, save_task
from subgroup_unlearn.data.dataset import concat
from subgroup_unlearn.data.split import (
    EVAL_ID_BASE,
    OOD_ID_BASE,
    evaluation_draw,
    ood_datasets,
    split_style_task,
    split_unlearn_task,
)
from subgroup_unlearn.data.synthetic import generate_synthetic
from subgroup_unlearn.data.styles import with_all_styles


def _ids(ds):
    return set(ds.ids.tolist())


def test_split_sizes(task):
    """24 images per subgroup, all target images forgotten, siblings split 2 / 21."""
    assert len(task.forget_set) == 24
    assert len(task.calibration_set) == 2
    assert len(task.retain_set) == 21
    assert len(task.eval_suites["target"].dataset) == 6
    assert len(task.eval_suites["retain"].dataset) == 6
    assert len(task.eval_suites["all"].dataset) == 18
    assert len(task.eval_suites["shifted_texture"].dataset) == 18


def test_split_membership(task):
    task.check_invariants()
    assert set(task.forget_set.subgroup.tolist()) == {0}
    assert torch.equal(task.forget_set.prompts, task.forget_set.superclass)
    assert set(task.retain_set.subgroup.tolist()) == {1}
    assert torch.equal(task.retain_set.prompts, task.retain_set.subgroup + 2)
    assert set(task.calibration_set.subgroup.tolist()) == {1}
    assert 0 not in set(task.eval_suites["shifted_texture"].dataset.subgroup.tolist())


def test_holdout_is_disjoint_from_training_splits(task):
    training = _ids(task.forget_set) | _ids(task.retain_set) | _ids(task.calibration_set)
    for name in ("target", "retain", "all"):
        assert not training & _ids(task.eval_suites[name].dataset)
    assert not _ids(task.retain_set) & _ids(task.calibration_set)


def test_suite_directions(task):
    assert task.eval_suites["target"].direction == "forget"
    assert all(s.direction == "retain" for n, s in task.eval_suites.items() if n != "target")


def test_split_is_seeded(dataset, taxonomy, task):
    evaluation = evaluation_draw(taxonomy, 6)
    again = split_unlearn_task(dataset, 0, SplitFractions(), seed=0, evaluation=evaluation)
    assert again.forget_set.fingerprint() == task.forget_set.fingerprint()
    assert again.retain_set.fingerprint() == task.retain_set.fingerprint()
    other = split_unlearn_task(dataset, 0, SplitFractions(), seed=1, evaluation=evaluation)
    assert other.fingerprints() != again.fingerprints()


def test_full_forget_fraction_keeps_every_target_image():
    taxonomy = TaxonomySpec(n_superclasses=2, subgroups_per_superclass=2, image_size=8, seed=0,
                            images_per_subgroup=100, n_factors=2)
    task = split_unlearn_task(generate_synthetic(taxonomy), 0, SplitFractions(forget=1.0), seed=0,
                              evaluation=evaluation_draw(taxonomy, 4))
    assert len(task.forget_set) == 100
    assert len(task.eval_suites["target"].dataset) == 4


def test_suites_come_from_the_evaluation_draw(task):
    for name in ("target", "retain", "all"):
        assert int(task.eval_suites[name].dataset.ids.min()) >= EVAL_ID_BASE
    assert set(task.eval_suites["target"].dataset.subgroup.tolist()) == {0}
    assert set(task.eval_suites["retain"].dataset.subgroup.tolist()) == {1}


def test_holdout_without_evaluation_draw(dataset):
    task = split_unlearn_task(dataset, 0, SplitFractions(holdout=0.25), seed=0)
    assert len(task.forget_set) == 18
    assert len(task.eval_suites["target"].dataset) == 6
    assert int(task.eval_suites["target"].dataset.ids.max()) < EVAL_ID_BASE
    with pytest.raises(ConfigurationError):
        split_unlearn_task(dataset, 0, SplitFractions(), seed=0)


def test_evaluation_draw_must_share_the_taxonomy(dataset, taxonomy):
    other = evaluation_draw(replace(taxonomy, seed=9), 2)
    with pytest.raises(ConfigurationError):
        split_unlearn_task(dataset, 0, SplitFractions(), seed=0, evaluation=other)


def test_missing_target(dataset):
    with pytest.raises(ConfigurationError):
        split_unlearn_task(dataset.where(dataset.subgroup != 0), 0, SplitFractions(), seed=0)


def test_invariant_check_catches_leaks(task):
    leaked = replace(task, retain_set=concat([task.retain_set, task.forget_set.with_prompts("fine")], "retain"))
    with pytest.raises(ConfigurationError) as exc:
        leaked.check_invariants()
    assert "forget and retain sets overlap" in exc.value.details


def test_style_task(dataset, taxonomy):
    styled = with_all_styles(dataset)
    task = split_style_task(styled, 0, 2, SplitFractions(), seed=0,
                            evaluation=with_all_styles(evaluation_draw(taxonomy, 2)))
    assert set(task.forget_set.style.tolist()) == {2}
    assert set(task.forget_set.superclass.tolist()) == {0}
    assert set(task.retain_set.superclass.tolist()) == {0}
    assert 2 not in set(task.retain_set.style.tolist())
    assert task.target_style == 2
    assert set(task.eval_suites["target"].dataset.style.tolist()) == {2}
    assert 2 not in set(task.eval_suites["retain"].dataset.style.tolist())
    with pytest.raises(ConfigurationError):
        split_style_task(styled, 0, 5, SplitFractions(), seed=0)


def test_ood_datasets(taxonomy):
    ood = ood_datasets(taxonomy, ["shifted_texture", "rescaled", "posterized"], 2)
    assert list(ood) == ["shifted_texture", "rescaled", "posterized"]
    assert int(ood["shifted_texture"].ids.min()) == OOD_ID_BASE
    assert set(ood["posterized"].style.tolist()) == {2}
    assert all(ds.taxonomy == taxonomy for ds in ood.values())
    with pytest.raises(ConfigurationError):
        ood_datasets(taxonomy, ["upside_down"], 2)


def test_archive_round_trip(task, tmp_path):
    save_task(task, tmp_path / "task")
    loaded = load_task(tmp_path / "task")
    assert loaded.fingerprints() == task.fingerprints()
    assert loaded.target_subgroup == task.target_subgroup
    assert loaded.seed == task.seed
    assert loaded.fractions == task.fractions
    assert {n: s.direction for n, s in loaded.eval_suites.items()} == \
        {n: s.direction for n, s in task.eval_suites.items()}
    assert load_task(tmp_path / "task" / "manifest.json").fingerprints() == task.fingerprints()


def test_archive_detects_tampering(task, tmp_path):
    directory = tmp_path / "task"
    save_task(task, directory)
    (directory / "retain.bin").write_bytes((directory / "forget.bin").read_bytes())
    with pytest.raises(ConfigurationError):
        load_task(directory)


def test_archive_missing_split(task, tmp_path):
    directory = tmp_path / "task"
    save_task(task, directory)
    (directory / "calibration.bin").unlink()
    with pytest.raises(ConfigurationError):
        load_task(directory)
