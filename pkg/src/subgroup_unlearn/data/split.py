"""Carving unlearning tasks out of a labeled dataset.

The in-domain evaluation suites come from a separate evaluation draw
when one is given; otherwise a ``holdout`` share is reserved per
subgroup. The remaining target examples feed the forget set D^f
(paired with the superclass prompt, the coarse label). The remaining
sibling examples form the retain pool: the first ``calibration`` share
becomes D_m, the next ``retain`` share becomes D^r (paired with
subgroup prompts).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from ..core.errors import ConfigurationError
from ..core.types import SplitFractions, TaxonomySpec
from .dataset import LabeledDataset
from .styles import STYLES, apply_style
from .synthetic import generate_synthetic

logger = logging.getLogger(__name__)

FORGET = "forget"
RETAIN = "retain"

# id ranges of the evaluation and out-of-domain draws (the main draw starts at 0)
EVAL_ID_BASE = 5_000_000
OOD_ID_BASE = 10_000_000
OOD_ID_STRIDE = 1_000_000


@dataclass(frozen=True)
class EvalSuite:
    """Evaluation set with the direction its ratio enters the Score in."""
    name: str
    dataset: LabeledDataset
    direction: str
    granularity: str = "coarse"

    def __post_init__(self) -> None:
        if self.direction not in (FORGET, RETAIN):
            raise ConfigurationError(f"suite direction must be forget or retain, got {self.direction!r}")


@dataclass
class UnlearnTask:
    """Forget, retain and calibration sets plus the evaluation suites."""
    forget_set: LabeledDataset
    retain_set: LabeledDataset
    calibration_set: LabeledDataset
    eval_suites: Dict[str, EvalSuite]
    taxonomy: TaxonomySpec
    target_subgroup: int
    target_style: Optional[int] = None
    seed: int = 0
    fractions: SplitFractions = field(default_factory=SplitFractions)

    @property
    def target_superclass(self) -> int:
        return self.taxonomy.superclass_of(self.target_subgroup)

    def _is_target(self, ds: LabeledDataset) -> torch.Tensor:
        if self.target_style is not None:
            return (ds.style == self.target_style) & (ds.superclass == self.target_superclass)
        return ds.subgroup == self.target_subgroup

    def check_invariants(self) -> None:
        """Raise :class:`ConfigurationError` if a disjointness invariant is broken."""
        f_ids = set(self.forget_set.ids.tolist())
        r_ids = set(self.retain_set.ids.tolist())
        m_ids = set(self.calibration_set.ids.tolist())
        problems: List[str] = []
        if f_ids & r_ids:
            problems.append("forget and retain sets overlap")
        if m_ids & r_ids:
            problems.append("calibration and retain sets overlap")
        if bool(self._is_target(self.retain_set).any()):
            problems.append("target examples in the retain set")
        if bool(self._is_target(self.calibration_set).any()):
            problems.append("target examples in the calibration set")
        if not bool((self.forget_set.prompts == self.forget_set.superclass).all()):
            problems.append("forget set is not labeled with superclass prompts")
        if problems:
            raise ConfigurationError("unlearning task violates its invariants", problems)

    def fingerprints(self) -> Dict[str, str]:
        out = {
            "forget": self.forget_set.fingerprint(),
            "retain": self.retain_set.fingerprint(),
            "calibration": self.calibration_set.fingerprint(),
        }
        for name, suite in self.eval_suites.items():
            out[f"suite:{name}"] = suite.dataset.fingerprint()
        return out


def _shuffled(mask: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    idx = torch.nonzero(mask, as_tuple=False).reshape(-1)
    return idx[torch.randperm(idx.numel(), generator=gen)]


def _holdout(groups: torch.Tensor, holdout: float, gen: torch.Generator):
    """Per group, split shuffled indices into (held-out, remaining)."""
    held, rest = [], []
    for g in torch.unique(groups, sorted=True).tolist():
        idx = _shuffled(groups == g, gen)
        n_hold = math.floor(holdout * idx.numel())
        held.append(idx[:n_hold])
        rest.append(idx[n_hold:])
    return torch.cat(held) if held else torch.zeros(0, dtype=torch.long), \
        torch.cat(rest) if rest else torch.zeros(0, dtype=torch.long)


def _carve(
    dataset: LabeledDataset,
    is_target: torch.Tensor,
    is_sibling: torch.Tensor,
    groups: torch.Tensor,
    fractions: SplitFractions,
    gen: torch.Generator,
):
    n = len(dataset)
    held, rest = _holdout(groups, fractions.holdout, gen)
    rest_mask = torch.zeros(n, dtype=torch.bool)
    rest_mask[rest] = True

    target_rest = _shuffled(rest_mask & is_target, gen)
    forget_idx = target_rest[: math.floor(fractions.forget * target_rest.numel())]

    pool = _shuffled(rest_mask & is_sibling, gen)
    n_cal = math.floor(fractions.calibration * pool.numel())
    n_ret = math.floor(fractions.retain * pool.numel())
    cal_idx = pool[:n_cal]
    ret_idx = pool[n_cal:n_cal + n_ret]

    held_mask = torch.zeros(n, dtype=torch.bool)
    held_mask[held] = True
    forget = dataset.subset(forget_idx.sort().values, "forget").with_prompts("coarse")
    retain = dataset.subset(ret_idx.sort().values, "retain").with_prompts("fine")
    calibration = dataset.subset(cal_idx.sort().values, "calibration").with_prompts("coarse")
    return forget, retain, calibration, held_mask


def _suites(
    dataset: LabeledDataset,
    held_mask: torch.Tensor,
    evaluation: Optional[LabeledDataset],
    target_of: Callable[[LabeledDataset], torch.Tensor],
    sibling_of: Callable[[LabeledDataset], torch.Tensor],
    ood: Mapping[str, LabeledDataset],
) -> Dict[str, EvalSuite]:
    if evaluation is not None:
        if evaluation.taxonomy != dataset.taxonomy:
            raise ConfigurationError(f"evaluation draw {evaluation.name} uses another taxonomy")
        dataset, held_mask = evaluation, torch.ones(len(evaluation), dtype=torch.bool)
    elif not bool(held_mask.any()):
        raise ConfigurationError("in-domain suites need an evaluation draw or a holdout fraction > 0")
    is_target, is_sibling = target_of(dataset), sibling_of(dataset)
    suites = {
        "target": EvalSuite("target", dataset.where(held_mask & is_target, "target").with_prompts("coarse"), FORGET),
        "retain": EvalSuite("retain", dataset.where(held_mask & is_sibling, "retain").with_prompts("coarse"), RETAIN),
        "all": EvalSuite("all", dataset.where(held_mask & ~is_target, "all").with_prompts("coarse"), RETAIN),
    }
    for name, ds in ood.items():
        keep = ~target_of(ds)
        suites[name] = EvalSuite(name, ds.where(keep, name).with_prompts("coarse"), RETAIN)
    return suites


def split_unlearn_task(
    dataset: LabeledDataset,
    target_subgroup: int,
    fractions: SplitFractions,
    seed: int,
    ood: Optional[Mapping[str, LabeledDataset]] = None,
    evaluation: Optional[LabeledDataset] = None,
) -> UnlearnTask:
    """Build the task of forgetting ``target_subgroup``.

    Args:
        dataset: In-domain labeled data.
        target_subgroup: Subgroup whose association with its superclass
            prompt is erased.
        fractions: Split fractions.
        seed: Shuffling seed.
        ood: Optional out-of-domain datasets; their non-target examples
            become additional retain-direction suites.
        evaluation: Optional in-domain draw the ``target``, ``retain``
            and ``all`` suites are built from. Without it they come from
            the ``holdout`` share of ``dataset``.

    Raises:
        ConfigurationError: If the target is absent, the fractions are
            inconsistent or no in-domain suite can be built.
    """
    tax = dataset.taxonomy
    if not bool((dataset.subgroup == target_subgroup).any()):
        raise ConfigurationError(f"target subgroup {target_subgroup} has no example in {dataset.name}")
    superclass = tax.superclass_of(target_subgroup)
    target_of = lambda ds: ds.subgroup == target_subgroup  # noqa: E731
    sibling_of = lambda ds: (ds.superclass == superclass) & ~target_of(ds)  # noqa: E731
    gen = torch.Generator().manual_seed(seed)
    forget, retain, calibration, held = _carve(dataset, target_of(dataset), sibling_of(dataset), dataset.subgroup,
                                               fractions, gen)
    suites = _suites(dataset, held, evaluation, target_of, sibling_of, ood or {})
    task = UnlearnTask(forget, retain, calibration, suites, tax, target_subgroup, None, seed, fractions)
    task.check_invariants()
    logger.info("task: |D^f|=%d |D^r|=%d |D_m|=%d suites=%s", len(forget), len(retain), len(calibration),
                ",".join(suites))
    return task


def split_style_task(
    dataset: LabeledDataset,
    target_subgroup: int,
    target_style: int,
    fractions: SplitFractions,
    seed: int,
    ood: Optional[Mapping[str, LabeledDataset]] = None,
    evaluation: Optional[LabeledDataset] = None,
) -> UnlearnTask:
    """Build the task of forgetting one style inside the superclass of ``target_subgroup``.

    ``dataset`` (and ``evaluation``, when given) must contain the styled
    copies (see :func:`~subgroup_unlearn.data.styles.with_all_styles`).
    The retain pool is every other style of the same superclass.
    """
    if target_style not in STYLES:
        raise ConfigurationError(f"unknown style id {target_style}")
    tax = dataset.taxonomy
    superclass = tax.superclass_of(target_subgroup)
    target_of = lambda ds: (ds.style == target_style) & (ds.superclass == superclass)  # noqa: E731
    sibling_of = lambda ds: (ds.superclass == superclass) & ~target_of(ds)  # noqa: E731
    if not bool(target_of(dataset).any()):
        raise ConfigurationError(f"style {target_style} has no example in {dataset.name}")
    groups = dataset.subgroup * (len(STYLES) + 1) + dataset.style
    gen = torch.Generator().manual_seed(seed)
    forget, retain, calibration, held = _carve(dataset, target_of(dataset), sibling_of(dataset), groups,
                                               fractions, gen)
    suites = _suites(dataset, held, evaluation, target_of, sibling_of, ood or {})
    task = UnlearnTask(forget, retain, calibration, suites, tax, target_subgroup, target_style, seed, fractions)
    task.check_invariants()
    return task


def evaluation_draw(taxonomy: TaxonomySpec, images_per_subgroup: int) -> LabeledDataset:
    """Fresh in-domain draw for the evaluation suites, ids disjoint from the main draw."""
    return generate_synthetic(taxonomy, "eval", images_per_subgroup, EVAL_ID_BASE)


def ood_datasets(taxonomy: TaxonomySpec, names: Sequence[str], images_per_subgroup: int) -> Dict[str, LabeledDataset]:
    """Out-of-domain draws of the same classes.

    ``shifted_texture`` swaps the texture family, ``rescaled`` renders at
    half resolution and upsamples, the style names restyle a fresh draw.
    """
    other_family = "square" if taxonomy.texture_family == "sine" else "sine"
    out: Dict[str, LabeledDataset] = {}
    for i, name in enumerate(names):
        offset = OOD_ID_BASE + i * OOD_ID_STRIDE
        if name == "shifted_texture":
            ds = generate_synthetic(taxonomy.shifted(texture_family=other_family), f"ood:{name}",
                                    images_per_subgroup, offset)
        elif name == "rescaled":
            ds = generate_synthetic(taxonomy.shifted(render_size=max(2, taxonomy.image_size // 2)),
                                    f"ood:{name}", images_per_subgroup, offset)
        elif name in ("sketched", "posterized", "grayscale"):
            style_id = {"sketched": 1, "posterized": 2, "grayscale": 3}[name]
            ds = apply_style(generate_synthetic(taxonomy, f"ood:{name}", images_per_subgroup, offset), style_id)
        else:
            raise ConfigurationError(f"unknown out-of-domain suite {name!r}")
        out[name] = LabeledDataset(ds.images, ds.superclass, ds.subgroup, ds.style, ds.ids, ds.prompts,
                                   taxonomy, name)
    return out


def reference_datasets(
    taxonomy: TaxonomySpec,
    ood_names: Sequence[str],
    ood_per_subgroup: int,
    eval_per_subgroup: int,
) -> Tuple[LabeledDataset, LabeledDataset, Dict[str, LabeledDataset]]:
    """Main, evaluation and out-of-domain draws of a taxonomy."""
    return (generate_synthetic(taxonomy), evaluation_draw(taxonomy, eval_per_subgroup),
            ood_datasets(taxonomy, ood_names, ood_per_subgroup))
