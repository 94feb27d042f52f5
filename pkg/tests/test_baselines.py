"""Tests for the baseline unlearning methods."""

from __future__ import annotations

from dataclasses import replace

import pytest
import torch

from subgroup_unlearn.baselines.fisher_noise import noise_std, sample_fisher_noise
from subgroup_unlearn.baselines.lip import lip_terms
from subgroup_unlearn.baselines.registry import METHODS, run_baseline
from subgroup_unlearn.core.errors import ConfigurationError
from subgroup_unlearn.core.types import BaselineConfig
from subgroup_unlearn.model.architecture import buffer_names


def config(method: str, **changes) -> BaselineConfig:
    base = dict(method=method, learning_rate=1e-3, batch_size=8, epochs=1, seed=3, noise_copies=2)
    base.update(changes)
    return BaselineConfig(**base)


def test_methods_are_listed():
    assert METHODS == ("FT", "GA", "FISHER_NOISE", "LIP", "EMMN")


def test_unknown_or_mismatched_method(original, task):
    with pytest.raises(ConfigurationError):
        run_baseline("NOPE", original, task, config("FT"))
    with pytest.raises(ConfigurationError):
        run_baseline("GA", original, task, config("FT"))
    with pytest.raises(ConfigurationError):
        BaselineConfig("NOPE")


@pytest.mark.parametrize("method", ["FT", "GA", "LIP", "EMMN"])
def test_zero_epochs_keep_the_original(original, task, method):
    out = run_baseline(method, original, task, config(method, epochs=0))
    assert out.equals(original)
    assert out.meta.provenance == f"baseline:{method}"


@pytest.mark.parametrize("method", ["FT", "GA", "FISHER_NOISE", "LIP", "EMMN"])
def test_only_the_image_tower_moves(original, task, method):
    out = run_baseline(method, original, task, config(method))
    assert torch.equal(out["text.table.weight"], original["text.table.weight"])
    assert all(torch.equal(out[n], original[n]) for n in buffer_names(original.spec))
    assert not torch.equal(out["image.proj.weight"], original["image.proj.weight"])
    assert out.meta.extra["method"] == method


def test_fisher_noise_without_variance_is_the_original(original, task):
    out = run_baseline("FISHER_NOISE", original, task, config("FISHER_NOISE", alpha_var=0.0))
    assert out.equals(original)


def test_fisher_noise_is_seeded(original, task):
    a = run_baseline("FISHER_NOISE", original, task, config("FISHER_NOISE"))
    b = run_baseline("FISHER_NOISE", original, task, config("FISHER_NOISE"))
    c = run_baseline("FISHER_NOISE", original, task, config("FISHER_NOISE", seed=4))
    assert a.equals(b)
    assert not a.equals(c)


@pytest.mark.parametrize("alpha_var, expected", [(0.2, 0.1), (0.8, 0.4)])
def test_fisher_noise_variance_scales_with_alpha(alpha_var, expected):
    fisher = {"w": torch.full((20000,), 4.0, dtype=torch.float64)}
    cfg = config("FISHER_NOISE", alpha_var=alpha_var)
    noise = sample_fisher_noise(fisher, cfg, torch.Generator().manual_seed(0))["w"]
    assert float(noise.var()) == pytest.approx(expected, rel=0.05)
    assert abs(float(noise.mean())) < 0.02


def test_fisher_noise_std_is_capped():
    std = noise_std(torch.zeros(3, dtype=torch.float64), config("FISHER_NOISE"))
    assert torch.equal(std, torch.ones(3, dtype=torch.float64))


def test_fisher_conventions_order_the_noise():
    fisher = torch.tensor([0.1, 1.0, 10.0], dtype=torch.float64)
    inverse = noise_std(fisher, config("FISHER_NOISE"))
    direct = noise_std(fisher, config("FISHER_NOISE", fisher_convention="direct"))
    assert bool((inverse[1:] < inverse[:-1]).all())
    assert bool((direct[1:] > direct[:-1]).all())


def test_emmn_without_forget_set_is_ft(original, task):
    """With an empty forget set the joint objective reduces to fine-tuning."""
    empty = replace(task, forget_set=task.forget_set.subset([]))
    emmn = run_baseline("EMMN", original, empty, config("EMMN"))
    ft = run_baseline("FT", original, empty, config("FT"))
    assert emmn.equals(ft)


def test_lip_terms_are_non_negative(original, task):
    batch = task.forget_set.subset(torch.arange(4))
    gen = torch.Generator().manual_seed(0)
    noise = 0.1 * torch.randn((2,) + tuple(batch.images.shape), generator=gen, dtype=batch.images.dtype)
    emb, cls = lip_terms(original.spec, original.as_dict(), batch.images, noise, batch.class_prompts("coarse"))
    assert float(emb) >= 0.0 and float(cls) >= 0.0
    assert torch.isfinite(emb) and torch.isfinite(cls)
