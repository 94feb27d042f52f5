"""Tests for the dual encoder: embeddings, zero-shot classification, losses, pre-training."""

from __future__ import annotations

import json
from dataclasses import replace as dc_replace
from pathlib import Path

import pytest
import torch

from subgroup_unlearn.core.errors import (
    ConfigurationError,
    CoverageError,
    DegenerateInputError,
    InputShapeError,
    VocabularyError,
)
from subgroup_unlearn.core.types import BlockSpec, ModelSpec, TrainConfig
from subgroup_unlearn.data.synthetic import generate_synthetic
from subgroup_unlearn.model.dual_encoder import (
    cosine_similarity,
    encode_image,
    encode_text,
    init_parameters,
    label_space_loss,
    pretrain_toy,
    zero_shot_classify,
)
from subgroup_unlearn.model.params import ParameterSet


GOLDEN_EMBEDDINGS = Path(__file__).resolve().parent / "fixtures" / "golden_embeddings.json"


def test_embeddings_are_unit_norm(original, dataset):
    img = encode_image(original, dataset.images[:10])
    txt = encode_text(original, list(range(len(original.spec.vocab))))
    assert img.shape == (10, original.spec.embed_dim)
    assert txt.shape == (len(original.spec.vocab), original.spec.embed_dim)
    assert torch.allclose(img.norm(dim=1), torch.ones(10, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(txt.norm(dim=1), torch.ones(txt.shape[0], dtype=torch.float64), atol=1e-12)


def test_empty_image_batch(original):
    assert encode_image(original, torch.zeros(0, 3, 8, 8)).shape == (0, original.spec.embed_dim)


def test_wrong_image_shape(original):
    with pytest.raises(InputShapeError):
        encode_image(original, torch.zeros(2, 3, 5, 5))
    with pytest.raises(InputShapeError):
        encode_image(original, torch.zeros(3, 8, 8))


@pytest.mark.parametrize("prompt", [-1, 6, 100])
def test_prompt_outside_vocabulary(original, prompt):
    with pytest.raises(VocabularyError):
        encode_text(original, [prompt])


def test_cosine_similarity():
    v = torch.tensor([1.0, 2.0, -3.0], dtype=torch.float64)
    assert cosine_similarity(v, 2 * v) == pytest.approx(1.0)
    assert cosine_similarity(v, -v) == pytest.approx(-1.0)
    with pytest.raises(DegenerateInputError):
        cosine_similarity(v, torch.zeros(3))


def test_zero_shot_needs_a_class(original, dataset):
    with pytest.raises(ConfigurationError):
        zero_shot_classify(original, dataset.images[:2], [])


def test_zero_shot_ties_go_to_lowest_index(original, dataset):
    predictions, sims = zero_shot_classify(original, dataset.images[:5], [1, 1])
    assert sims.shape == (5, 2)
    assert predictions.tolist() == [0] * 5


def test_zero_shot_predictions_follow_similarities(original, dataset):
    predictions, sims = zero_shot_classify(original, dataset.images, dataset.class_prompts("coarse"))
    assert torch.equal(predictions, torch.argmax(sims, dim=1))
    assert float(sims.abs().max()) <= 1.0 + 1e-12


def test_contrastive_loss_gradient_matches_finite_differences(untrained, dataset):
    """Autograd gradients of the label-space loss agree with central differences."""
    spec = untrained.spec
    batch = dataset.subset(torch.arange(0, len(dataset), 6))
    base = untrained.as_dict()
    gen = torch.Generator().manual_seed(0)
    h = 1e-6

    def value(name, flat):
        entries = dict(base)
        entries[name] = flat.reshape(base[name].shape)
        return float(label_space_loss(spec, entries, batch, "coarse"))

    for name, n_samples in (("image.proj.weight", 12), ("text.table.weight", 8)):
        leaf = base[name].clone().requires_grad_(True)
        entries = dict(base)
        entries[name] = leaf
        (grad,) = torch.autograd.grad(label_space_loss(spec, entries, batch, "coarse"), leaf)
        flat_grad = grad.reshape(-1)
        for i in torch.randperm(leaf.numel(), generator=gen)[:n_samples].tolist():
            plus = base[name].clone().reshape(-1)
            minus = base[name].clone().reshape(-1)
            plus[i] += h
            minus[i] -= h
            fd = (value(name, plus) - value(name, minus)) / (2 * h)
            assert fd == pytest.approx(float(flat_grad[i]), rel=1e-3, abs=1e-7)


def test_init_parameters_is_seeded(spec):
    assert init_parameters(spec, 5).equals(init_parameters(spec, 5))
    assert not init_parameters(spec, 5).equals(init_parameters(spec, 6))


def test_pretraining_without_steps_returns_initialization(spec, taxonomy):
    data = generate_synthetic(taxonomy, sample="pretrain", images_per_subgroup=4)
    params = pretrain_toy(spec, data, TrainConfig(steps=0, batch_size=4, seed=9))
    assert params.equals(init_parameters(spec, 9))
    assert params.meta.provenance == "original"


def test_pretraining_is_deterministic(spec, taxonomy):
    data = generate_synthetic(taxonomy, sample="pretrain", images_per_subgroup=8)
    cfg = TrainConfig(steps=5, batch_size=8, learning_rate=0.01, seed=4)
    first = pretrain_toy(spec, data, cfg)
    assert first.equals(pretrain_toy(spec, data, cfg))
    assert not first.equals(init_parameters(spec, 4))


def test_pretraining_populates_bn_statistics(original, untrained):
    for layer in original.spec.bn_layers():
        assert not torch.equal(original[f"{layer}.running_mean"], untrained[f"{layer}.running_mean"])


def test_pretraining_needs_every_class(spec, dataset):
    with pytest.raises(CoverageError):
        pretrain_toy(spec, dataset.where(dataset.subgroup != 3), TrainConfig(steps=1, batch_size=4))


def golden_model():
    """Model, images and expected values of the closed-form fixture."""
    data = json.loads(GOLDEN_EMBEDDINGS.read_text(encoding="utf-8"))
    shape = data["spec"]
    spec = ModelSpec(
        blocks=(BlockSpec(shape["width"], 1, 1, True),),
        embed_dim=shape["embed_dim"],
        vocab=tuple(shape["vocab"]),
        image_size=shape["image_size"],
    )
    entries = {name: torch.tensor(value, dtype=torch.float64) for name, value in data["entries"].items()}
    params = init_parameters(spec, 0).replace(entries)
    size = shape["image_size"]
    images = torch.tensor(data["colours"], dtype=torch.float64).reshape(-1, 3, 1, 1).expand(-1, 3, size, size)
    return params, images.contiguous(), data


def test_embeddings_match_golden_file():
    params, images, data = golden_model()
    img = encode_image(params, images)
    txt = encode_text(params, [0, 1, 2])
    expected_img = torch.tensor(data["image_embeddings"], dtype=torch.float64)
    expected_txt = torch.tensor(data["text_embeddings"], dtype=torch.float64)
    assert torch.allclose(img, expected_img, rtol=0.0, atol=1e-12)
    assert torch.allclose(txt, expected_txt, rtol=0.0, atol=1e-12)


def test_zero_shot_matches_golden_file():
    params, images, data = golden_model()
    predictions, sims = zero_shot_classify(params, images, [0, 1, 2])
    assert predictions.tolist() == data["predictions"]
    assert torch.allclose(sims, torch.tensor(data["similarities"], dtype=torch.float64), rtol=0.0, atol=1e-12)


def test_zero_shot_matches_brute_force(original, dataset):
    """3 images x 3 classes, scored one pair at a time."""
    images = dataset.images[torch.tensor([0, 30, 70])]
    classes = [0, 2, 5]
    predictions, _ = zero_shot_classify(original, images, classes)
    img = encode_image(original, images)
    txt = encode_text(original, classes)
    for i in range(3):
        scores = [cosine_similarity(img[i], txt[j]) for j in range(3)]
        assert predictions[i].item() == scores.index(max(scores))


def test_zero_shot_ignores_the_temperature(original, dataset):
    hotter = ParameterSet(original.as_dict(), dc_replace(original.meta, spec=dc_replace(original.spec, temperature=3.0)))
    classes = dataset.class_prompts("coarse")
    assert torch.equal(zero_shot_classify(hotter, dataset.images, classes)[0],
                       zero_shot_classify(original, dataset.images, classes)[0])


@pytest.mark.parametrize("scale", [0.25, 7.0])
def test_zero_shot_invariant_to_positive_rescaling(original, dataset, scale):
    """Scaling the projection or the prompt table by a positive factor keeps every prediction."""
    classes = dataset.class_prompts("coarse")
    expected, _ = zero_shot_classify(original, dataset.images, classes)
    scaled = original.replace({
        "image.proj.weight": original["image.proj.weight"] * scale,
        "image.proj.bias": original["image.proj.bias"] * scale,
        "text.table.weight": original["text.table.weight"] * scale,
    })
    predictions, sims = zero_shot_classify(scaled, dataset.images, classes)
    assert torch.equal(predictions, expected)
    assert torch.allclose(sims, zero_shot_classify(original, dataset.images, classes)[1], rtol=0.0, atol=1e-12)
