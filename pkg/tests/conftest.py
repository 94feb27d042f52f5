"""Shared fixtures: a two-superclass benchmark small enough for unit tests."""

from __future__ import annotations

from pathlib import Path

import pytest

from subgroup_unlearn.core.config import load_config_text
from subgroup_unlearn.core.types import BlockSpec, ModelSpec, SplitFractions, TaxonomySpec, TrainConfig
from subgroup_unlearn.data.split import evaluation_draw, ood_datasets, split_unlearn_task
from subgroup_unlearn.data.synthetic import generate_synthetic
from subgroup_unlearn.model.dual_encoder import init_parameters, pretrain_toy

PROJECT_ROOT = Path(__file__).resolve().parents[1]

TINY_CONFIG = """\
version: "1.0"
run:
  name: tiny
  seed: 3
model:
  blocks:
    - [4, 3, 1, true]
    - [6, 3, 2, true]
  embed_dim: 8
taxonomy:
  n_superclasses: 2
  subgroups_per_superclass: 2
  image_size: 8
  images_per_subgroup: 24
  n_factors: 2
split:
  target_subgroup: 0
pretrain:
  steps: 80
  batch_size: 16
  learning_rate: 0.01
selection:
  k: 1
adapters:
  rank: 2
forget:
  learning_rate: 0.01
  steps: 3
  batch_size: 8
remind:
  learning_rate: 0.001
  steps: 3
  batch_size: 8
  align_steps: 2
restore:
  merge_grid: [0.0, 0.5, 1.0]
baselines:
  learning_rate: 0.001
  batch_size: 8
  ft_epochs: 1
  ga_epochs: 1
  lip_epochs: 1
  emmn_epochs: 1
  noise_copies: 2
eval:
  retrieval_k: 5
  images_per_subgroup: 6
  ood_images_per_subgroup: 6
  ood_suites: [shifted_texture]
sweep:
  remind_steps: [1, 2]
  alpha_merge: [0.0, 1.0]
"""


@pytest.fixture(scope="session")
def project_root() -> Path:
    return PROJECT_ROOT


@pytest.fixture(scope="session")
def taxonomy() -> TaxonomySpec:
    return TaxonomySpec(
        n_superclasses=2,
        subgroups_per_superclass=2,
        overlap=0.5,
        image_size=8,
        seed=0,
        images_per_subgroup=24,
        n_factors=2,
    )


@pytest.fixture(scope="session")
def spec(taxonomy) -> ModelSpec:
    return ModelSpec(
        blocks=(BlockSpec(4, 3, 1, True), BlockSpec(6, 3, 2, True)),
        embed_dim=8,
        vocab=taxonomy.vocab(),
        image_size=taxonomy.image_size,
    )


@pytest.fixture(scope="session")
def dataset(taxonomy):
    """Main draw: 4 subgroups x 24 images."""
    return generate_synthetic(taxonomy)


@pytest.fixture(scope="session")
def untrained(spec):
    return init_parameters(spec, seed=1)


@pytest.fixture(scope="session")
def original(spec, taxonomy):
    """Briefly pre-trained original model (on its own image draw)."""
    data = generate_synthetic(taxonomy, sample="pretrain")
    return pretrain_toy(spec, data, TrainConfig(steps=80, batch_size=16, learning_rate=0.01, seed=0))


@pytest.fixture(scope="session")
def task(dataset, taxonomy):
    """Forget subgroup 0 (super0/sub0); suites from a 6-per-subgroup evaluation draw plus one shifted draw."""
    ood = ood_datasets(taxonomy, ["shifted_texture"], 6)
    return split_unlearn_task(dataset, 0, SplitFractions(), seed=0, ood=ood,
                              evaluation=evaluation_draw(taxonomy, 6))


@pytest.fixture(scope="session")
def tiny_config():
    """The tiny configuration, resolved."""
    return load_config_text(TINY_CONFIG)


@pytest.fixture
def tiny_config_text() -> str:
    return TINY_CONFIG


@pytest.fixture
def tiny_config_path(tmp_path) -> Path:
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path
