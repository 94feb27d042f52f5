"""Configuration data model for the subgroup_unlearn project.

These classes mirror the sections of the run configuration schema
defined in ``schemas/run_config-1.0.schema.json``. They provide type
hints, defaults and invariant checks for every stage of an experiment.
Tensor-bearing types (parameter sets, datasets, reports) live next to
the code that produces them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigurationError

BASELINE_METHODS: Tuple[str, ...] = ("FT", "GA", "FISHER_NOISE", "LIP", "EMMN")
STYLE_NAMES: Dict[int, str] = {0: "none", 1: "edge_sketch", 2: "posterize", 3: "grayscale"}
DEFAULT_MERGE_GRID: Tuple[float, ...] = tuple(round(i * 0.05, 2) for i in range(21))

# label spaces the reminding loss can use; "both" sums the coarse and fine losses
STAGE_PROMPTS: Tuple[str, ...] = ("fine", "coarse", "both")


def canonical_json(data: Any) -> str:
    """Serialize ``data`` deterministically (sorted keys, no whitespace)."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class BlockSpec:
    """One convolution block of the image tower."""
    width: int
    kernel_size: int
    stride: int = 1
    has_batchnorm: bool = True


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the dual encoder.

    ``vocab`` holds the raw prompt strings; the prompt template is the
    class string itself.
    """
    blocks: Tuple[BlockSpec, ...]
    embed_dim: int
    vocab: Tuple[str, ...]
    temperature: float = 0.07
    in_channels: int = 3
    image_size: int = 16

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ConfigurationError("model spec needs at least one image tower block")
        if not any(b.has_batchnorm for b in self.blocks):
            raise ConfigurationError("at least one image tower block must carry batch normalization")
        if self.embed_dim <= 0:
            raise ConfigurationError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if not self.vocab:
            raise ConfigurationError("vocabulary is empty")
        if len(set(self.vocab)) != len(self.vocab):
            raise ConfigurationError("vocabulary entries must be unique")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "blocks": [asdict(b) for b in self.blocks],
            "embed_dim": self.embed_dim,
            "vocab": list(self.vocab),
            "temperature": self.temperature,
            "in_channels": self.in_channels,
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(
            blocks=tuple(BlockSpec(**b) for b in data["blocks"]),
            embed_dim=int(data["embed_dim"]),
            vocab=tuple(data["vocab"]),
            temperature=float(data["temperature"]),
            in_channels=int(data.get("in_channels", 3)),
            image_size=int(data.get("image_size", 16)),
        )

    def fingerprint(self) -> str:
        """Architecture fingerprint: SHA-256 of the canonical spec JSON."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()

    def bn_layers(self) -> List[str]:
        return [f"image.blocks.{i}.bn" for i, b in enumerate(self.blocks) if b.has_batchnorm]

    def image_layers(self) -> List[str]:
        """Trainable image-tower layers in tower order."""
        layers: List[str] = []
        for i, b in enumerate(self.blocks):
            layers.append(f"image.blocks.{i}.conv")
            if b.has_batchnorm:
                layers.append(f"image.blocks.{i}.bn")
        layers.append("image.proj")
        return layers

    def matrix_layers(self) -> List[str]:
        """Image-tower layers whose weight is a matrix (convolutions unrolled)."""
        return [f"image.blocks.{i}.conv" for i in range(len(self.blocks))] + ["image.proj"]


@dataclass(frozen=True)
class TaxonomySpec:
    """Shape of the synthetic superclass/subgroup benchmark.

    ``overlap`` is the fraction of generative factors shared by sibling
    subgroups (0 = disjoint factors, 1 = identical distributions).
    ``texture_family`` and ``render_size`` only change how factors are
    drawn on the canvas, never the factors themselves, so shifted specs
    describe the same classes under a distribution shift.
    """
    n_superclasses: int = 4
    subgroups_per_superclass: int = 4
    overlap: float = 0.5
    image_size: int = 16
    seed: int = 0
    images_per_subgroup: int = 200
    n_factors: int = 4
    texture_family: str = "sine"
    render_size: Optional[int] = None
    noise: float = 0.03

    def __post_init__(self) -> None:
        if self.n_superclasses < 1 or self.subgroups_per_superclass < 1:
            raise ConfigurationError("taxonomy needs at least one superclass and one subgroup")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigurationError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.images_per_subgroup < 1 or self.n_factors < 1 or self.image_size < 4:
            raise ConfigurationError("taxonomy sizes must be positive (image_size >= 4)")
        if self.texture_family not in ("sine", "square"):
            raise ConfigurationError(f"unknown texture family {self.texture_family!r}")
        if self.render_size is not None and not 2 <= self.render_size <= self.image_size:
            raise ConfigurationError("render_size must lie in [2, image_size]")

    @property
    def n_subgroups(self) -> int:
        return self.n_superclasses * self.subgroups_per_superclass

    def superclass_of(self, subgroup: int) -> int:
        return subgroup // self.subgroups_per_superclass

    def superclass_names(self) -> List[str]:
        return [f"super{c}" for c in range(self.n_superclasses)]

    def subgroup_names(self) -> List[str]:
        k = self.subgroups_per_superclass
        return [f"super{g // k}/sub{g % k}" for g in range(self.n_subgroups)]

    def vocab(self) -> Tuple[str, ...]:
        """Superclass prompts first, then subgroup prompts."""
        return tuple(self.superclass_names() + self.subgroup_names())

    def superclass_prompt(self, superclass: int) -> int:
        return superclass

    def subgroup_prompt(self, subgroup: int) -> int:
        return self.n_superclasses + subgroup

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def shifted(self, **changes: Any) -> "TaxonomySpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class SplitFractions:
    """Fractions used to carve an UnlearnTask out of a dataset.

    ``holdout`` is reserved per subgroup for evaluation suites first; it
    stays 0 when the suites come from a separate evaluation draw. Of the
    remaining target examples ``forget`` go to D^f. The remaining
    sibling examples form the retain pool, of which ``calibration`` go
    to D_m and ``retain`` to the fine-tuning portion of D^r.
    """
    holdout: float = 0.0
    forget: float = 1.0
    calibration: float = 0.1
    retain: float = 0.9

    def __post_init__(self) -> None:
        for name in ("holdout", "forget", "calibration", "retain"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"split fraction {name} must lie in [0, 1], got {value}")
        if self.holdout >= 1.0:
            raise ConfigurationError("holdout fraction must be < 1")
        if self.calibration + self.retain > 1.0 + 1e-12:
            raise ConfigurationError(
                f"calibration ({self.calibration}) + retain ({self.retain}) fractions exceed 1"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Contrastive pre-training of the original model."""
    steps: int = 600
    batch_size: int = 64
    learning_rate: float = 3e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ConfigurationError("pretrain needs steps >= 0, batch_size >= 2, learning_rate > 0")


@dataclass(frozen=True)
class SelectionConfig:
    """Relative Fisher layer selection."""
    epsilon: float = 1e-8
    k: Optional[int] = None
    fraction: float = 0.25
    objective: str = "similarity"
    max_examples: Optional[int] = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigurationError("selection epsilon must be > 0")
        if self.objective not in ("similarity", "contrastive"):
            raise ConfigurationError(f"unknown Fisher objective {self.objective!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigurationError("selection fraction must lie in (0, 1]")

    def resolve_k(self, n_layers: int) -> int:
        if self.k is not None:
            return self.k
        return max(1, math.ceil(self.fraction * n_layers))


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 4
    scaling: float = 1.0
    init_std: float = 0.01


@dataclass(frozen=True)
class StageConfig:
    """Hyper-parameters shared by the forget, remind and restore stages.

    ``ema_decay`` and ``merge_grid`` are the two different coefficients
    that share one symbol in the method description.

    ``stop_accuracy`` ends forgetting early once the share of D^f still
    recognized (within ``recognition_margin``) drops to it. The restore
    guard counts D^f examples with the same margin. ``forget_weight``
    adds the forgetting objective on D^f batches to the reminding loss.
    ``calibration_tolerance`` lets restoration take the smallest merge
    coefficient whose calibration accuracy is within it of the best.
    """
    learning_rate: float = 1e-6
    optimizer: str = "adam"
    steps: int = 0
    batch_size: int = 64
    stop_accuracy: Optional[float] = None
    recognition_margin: float = 0.0
    ema_decay: float = 0.9
    align: bool = True
    align_steps: int = 20
    align_step_size: float = 0.1
    perturbation_bound: Optional[float] = None
    forget_weight: float = 0.0
    merge_grid: Tuple[float, ...] = DEFAULT_MERGE_GRID
    max_forget_ratio: Optional[float] = None
    calibration_tolerance: float = 0.0
    restrict_to_selected: bool = False
    prompts: str = "fine"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.align_step_size <= 0:
            raise ConfigurationError("stage rates must be > 0")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.steps < 0 or self.align_steps < 0 or self.batch_size < 1:
            raise ConfigurationError("stage step counts must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigurationError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")
        if any(not 0.0 <= a <= 1.0 for a in self.merge_grid):
            raise ConfigurationError("merge grid values must lie in [0, 1]")
        if self.perturbation_bound is not None and self.perturbation_bound <= 0:
            raise ConfigurationError("perturbation_bound must be > 0 when set")
        if self.prompts not in STAGE_PROMPTS:
            raise ConfigurationError(f"prompts must be one of {', '.join(STAGE_PROMPTS)}, got {self.prompts!r}")
        if self.stop_accuracy is not None and not 0.0 <= self.stop_accuracy <= 1.0:
            raise ConfigurationError(f"stop_accuracy must lie in [0, 1], got {self.stop_accuracy}")
        if self.recognition_margin < 0 or self.forget_weight < 0 or self.calibration_tolerance < 0:
            raise ConfigurationError("recognition_margin, forget_weight and calibration_tolerance must be >= 0")


@dataclass(frozen=True)
class BaselineConfig:
    """Settings of one baseline unlearning method."""
    method: str
    learning_rate: float = 1e-6
    epochs: int = 2
    batch_size: int = 128
    noise_copies: int = 10
    noise_sigma: float = 0.1
    alpha_var: float = 0.2
    fisher_convention: str = "inverse"
    fisher_epsilon: float = 1e-8
    fisher_max_std: float = 1.0
    ga_loss_clip: float = 50.0
    retain_prompts: str = "fine"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in BASELINE_METHODS:
            raise ConfigurationError(
                f"unknown baseline method {self.method!r}; expected one of {', '.join(BASELINE_METHODS)}"
            )
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("baseline needs learning_rate > 0, epochs >= 0, batch_size >= 1")
        if self.method == "LIP" and (self.noise_copies < 1 or self.noise_sigma <= 0):
            raise ConfigurationError("LIP needs noise_copies >= 1 and noise_sigma > 0")
        if self.method == "FISHER_NOISE" and self.alpha_var < 0:
            raise ConfigurationError("alpha_var must be >= 0")
        if self.fisher_convention not in ("inverse", "direct"):
            raise ConfigurationError(f"unknown Fisher convention {self.fisher_convention!r}")
        if self.retain_prompts not in ("fine", "coarse"):
            raise ConfigurationError("retain_prompts must be 'fine' or 'coarse'")


@dataclass(frozen=True)
class TaskConfig:
    """Which subgroup (or style) to forget and how to split the data."""
    target_subgroup: int = 0
    target_style: Optional[int] = None
    fractions: SplitFractions = field(default_factory=SplitFractions)


@dataclass(frozen=True)
class EvalConfig:
    retrieval_k: int = 20
    images_per_subgroup: int = 50
    ood_images_per_subgroup: int = 50
    ood_suites: Tuple[str, ...] = ("shifted_texture", "rescaled", "posterized")


@dataclass(frozen=True)
class SweepConfig:
    """Ablation axes.

    ``alpha_merge`` values and ``fixed_alpha`` are restoration weights: the
    share of the original model in the merge (``1 - alpha`` of
    :func:`~subgroup_unlearn.unlearn.restore.merge_models`). With
    ``fixed_alpha`` unset the remind-steps sweep picks the merge on the
    calibration set like a plain run.
    """
    remind_steps: Tuple[int, ...] = (5, 10, 20, 30, 40, 50, 100)
    alpha_merge: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.65, 0.7, 0.9)
    fixed_alpha: Optional[float] = 0.65


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved experiment configuration."""
    name: str
    seed: int
    out_dir: str
    original_checkpoint: Optional[str]
    model: ModelSpec
    taxonomy: TaxonomySpec
    task: TaskConfig
    pretrain: TrainConfig
    selection: SelectionConfig
    adapters: AdapterConfig
    forget: StageConfig
    remind: StageConfig
    restore: StageConfig
    baselines: Dict[str, BaselineConfig]
    eval: EvalConfig
    sweep: SweepConfig
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)
    content_hash: str = ""

    def baseline(self, method: str) -> BaselineConfig:
        if method not in self.baselines:
            raise ConfigurationError(
                f"unknown baseline method {method!r}; expected one of {', '.join(BASELINE_METHODS)}"
            )
        return self.baselines[method]


@dataclass
class StageLog:
    """Per-step losses and summary values of one training or search stage.

    Serialized as the JSON stage log (``schemas/stage_log-1.0.schema.json``).
    """
    stage: str
    losses: List[float] = field(default_factory=list)
    values: Dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0

    def record(self, loss: float) -> None:
        self.losses.append(float(loss))

    def to_dict(self) -> Dict[str, Any]:
        return {"stage": self.stage, "losses": list(self.losses), "values": dict(self.values),
                "seconds": round(self.seconds, 3)}
