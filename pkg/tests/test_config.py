"""Tests for configuration loading, validation and seed derivation."""

from __future__ import annotations

import pytest

from subgroup_unlearn.core.config import load_config, load_config_text
from subgroup_unlearn.core.errors import ConfigurationError
from subgroup_unlearn.core.hashing import derive_seed
from subgroup_unlearn.core.types import BASELINE_METHODS, BaselineConfig, SplitFractions, StageConfig


def test_default_config_loads(project_root):
    """The shipped reference configuration validates and resolves."""
    cfg = load_config(project_root / "configs" / "default-1.0.yaml")
    assert cfg.name == "reference"
    assert cfg.taxonomy.n_subgroups == 16
    assert cfg.model.vocab == cfg.taxonomy.vocab()
    assert set(cfg.baselines) == set(BASELINE_METHODS)
    assert len(cfg.content_hash) == 64


def test_tiny_config_resolves_sections(tiny_config_text):
    cfg = load_config_text(tiny_config_text)
    assert cfg.seed == 3
    assert cfg.taxonomy.seed == 3
    assert cfg.selection.k == 1
    assert cfg.restore.merge_grid == (0.0, 0.5, 1.0)
    assert cfg.baselines["FISHER_NOISE"].epochs == 0
    assert cfg.baselines["GA"].epochs == 1
    assert cfg.eval.ood_suites == ("shifted_texture",)
    assert cfg.sweep.remind_steps == (1, 2)


def test_missing_required_key_is_named(tiny_config_text):
    """A missing key produces a diagnostic naming it, with its source line."""
    text = tiny_config_text.replace("  embed_dim: 8\n", "")
    with pytest.raises(ConfigurationError) as exc:
        load_config_text(text)
    assert any("embed_dim" in d for d in exc.value.details)
    assert all(d.startswith("<config>:") for d in exc.value.details)


def test_unknown_key_reports_its_line(tiny_config_text):
    text = tiny_config_text.replace("split:\n", "split:\n  bogus: 1\n")
    line = text.splitlines().index("  bogus: 1") + 1
    with pytest.raises(ConfigurationError) as exc:
        load_config_text(text)
    assert any("bogus" in d and d.startswith(f"<config>:{line}:") for d in exc.value.details)


def test_wrong_type_reports_dotted_path(tiny_config_text):
    text = tiny_config_text.replace("  embed_dim: 8\n", "  embed_dim: eight\n")
    with pytest.raises(ConfigurationError) as exc:
        load_config_text(text)
    assert any("model.embed_dim" in d for d in exc.value.details)


def test_every_violation_is_reported(tiny_config_text):
    text = tiny_config_text.replace("  embed_dim: 8\n", "").replace("split:\n", "split:\n  bogus: 1\n")
    with pytest.raises(ConfigurationError) as exc:
        load_config_text(text)
    assert len(exc.value.details) == 2


@pytest.mark.parametrize("text", ["version: [1.0", "- a\n- b\n"])
def test_unparseable_documents_are_rejected(text):
    with pytest.raises(ConfigurationError):
        load_config_text(text)


def test_missing_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.yaml")


def test_target_outside_taxonomy(tiny_config_text):
    text = tiny_config_text.replace("  target_subgroup: 0\n", "  target_subgroup: 9\n")
    with pytest.raises(ConfigurationError):
        load_config_text(text)


def test_seed_override_changes_hash_but_out_dir_does_not(tiny_config_text):
    base = load_config_text(tiny_config_text)
    reseeded = load_config_text(tiny_config_text, seed=7)
    moved = load_config_text(tiny_config_text, out_dir="elsewhere")
    assert reseeded.seed == 7
    assert reseeded.content_hash != base.content_hash
    assert moved.out_dir == "elsewhere"
    assert moved.content_hash == base.content_hash


def test_same_text_same_hash(tiny_config_text):
    assert load_config_text(tiny_config_text).content_hash == load_config_text(tiny_config_text).content_hash


def test_stage_seeds_are_derived_from_root(tiny_config_text):
    cfg = load_config_text(tiny_config_text)
    assert cfg.forget.seed == derive_seed(3, "forget")
    assert cfg.remind.seed == derive_seed(3, "remind")
    assert len({b.seed for b in cfg.baselines.values()}) == len(BASELINE_METHODS)


def test_derive_seed():
    assert derive_seed(0, "forget") == derive_seed(0, "forget")
    assert derive_seed(0, "forget") != derive_seed(0, "remind")
    assert derive_seed(0, "forget") != derive_seed(1, "forget")
    assert 0 <= derive_seed(12345, "baseline:GA") < 2 ** 63


def test_unknown_baseline_is_rejected(tiny_config_text):
    cfg = load_config_text(tiny_config_text)
    with pytest.raises(ConfigurationError):
        cfg.baseline("NOPE")
    with pytest.raises(ConfigurationError):
        BaselineConfig(method="NOPE")


@pytest.mark.parametrize("kwargs", [{"ema_decay": 1.5}, {"learning_rate": 0.0}, {"prompts": "medium"},
                                    {"merge_grid": (0.5, 1.2)}, {"steps": -1}])
def test_stage_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigurationError):
        StageConfig(**kwargs)


def test_split_fractions_must_fit():
    with pytest.raises(ConfigurationError):
        SplitFractions(calibration=0.5, retain=0.6)
    with pytest.raises(ConfigurationError):
        SplitFractions(holdout=1.0)
