"""Reminding stage.

Retain batches are first perturbed so that the feature statistics they
induce at every BatchNorm input of the ORIGINAL image tower match that
layer's running statistics (the pre-training distribution). The
forgotten model is then fine-tuned on the aligned batches with the
contrastive loss, while an exponential moving average anchored at the
original parameters is maintained and returned. A positive
``forget_weight`` keeps pushing D^f batches away from their superclass
prompt during fine-tuning.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence

import torch

from ..core.errors import ConfigurationError, TrainingFailure
from ..core.hashing import derive_seed
from ..core.types import ModelSpec, StageConfig, StageLog
from ..data.dataset import cycle_batches
from ..data.split import UnlearnTask
from .forget import forget_similarity
from ..model.architecture import layer_entries, template
from ..model.dual_encoder import image_embeddings, label_space_loss
from ..model.params import BnStatistics, ParameterSet

logger = logging.getLogger(__name__)


class BnInputHook:
    """Forward hook recording the batch mean and variance of a BN layer's input.

    The variance is the unbiased estimate, the one BatchNorm accumulates
    into its running variance.
    """

    def __init__(self, module: torch.nn.Module) -> None:
        self.mean: Optional[torch.Tensor] = None
        self.var: Optional[torch.Tensor] = None
        self.hook = module.register_forward_hook(self.hook_fn)

    def hook_fn(self, module, inputs, output) -> None:
        x = inputs[0]
        nch = x.shape[1]
        self.mean = x.mean(dim=(0, 2, 3))
        self.var = x.permute(1, 0, 2, 3).reshape(nch, -1).var(dim=1, unbiased=True)

    def close(self) -> None:
        self.hook.remove()


@contextmanager
def capture_bn_inputs(spec: ModelSpec) -> Iterator[List[BnInputHook]]:
    """Hooks on every BN layer of the shared template, in tower order."""
    module = template(spec)
    hooks = [BnInputHook(module.get_submodule(layer)) for layer in spec.bn_layers()]
    try:
        yield hooks
    finally:
        for h in hooks:
            h.close()


def bn_input_statistics(params: ParameterSet, images: torch.Tensor) -> List[Dict[str, torch.Tensor]]:
    """Batch mean/variance at each BN input when ``params`` encodes ``images``."""
    with torch.no_grad(), capture_bn_inputs(params.spec) as hooks:
        image_embeddings(params.spec, params.as_dict(), images)
    return [{"mean": h.mean, "var": h.var} for h in hooks]


def alignment_loss(
    spec: ModelSpec,
    entries: Mapping[str, torch.Tensor],
    images: torch.Tensor,
    stats: BnStatistics,
) -> torch.Tensor:
    """Sum over BN layers of ``|mean - running_mean| + |var - running_var|`` (L2 norms)."""
    with capture_bn_inputs(spec) as hooks:
        image_embeddings(spec, entries, images)
    loss = images.new_zeros(())
    for hook, mu, sigma in zip(hooks, stats.means, stats.variances):
        loss = loss + torch.linalg.vector_norm(hook.mean - mu) + torch.linalg.vector_norm(hook.var - sigma)
    return loss


@dataclass(frozen=True)
class AlignedBatch:
    originals: torch.Tensor
    perturbations: torch.Tensor
    loss: float
    initial_loss: float

    @property
    def aligned(self) -> torch.Tensor:
        return (self.originals + self.perturbations).clamp(0.0, 1.0)


def align_batch(original: ParameterSet, images: torch.Tensor, cfg: StageConfig) -> AlignedBatch:
    """Optimise per-image perturbations against the original BN statistics.

    This is not plain fixed-step gradient descent on the raw gradient.
    The gradient is scaled to unit max-abs so ``cfg.align_step_size`` is
    in pixel units, and a step is kept only if the alignment loss does
    not increase (otherwise the step size is halved), so the returned
    loss never exceeds the loss of the unperturbed batch. Aligned pixels
    stay in [0, 1] and, when ``cfg.perturbation_bound`` is set, within
    that bound of the original.

    Raises:
        ConfigurationError: If the batch holds fewer than two images.
    """
    if images.shape[0] < 2:
        raise ConfigurationError("alignment needs a batch of at least two images")
    spec = original.spec
    entries = original.as_dict()
    stats = original.bn_statistics()
    delta = torch.zeros_like(images)

    def loss_at(d: torch.Tensor) -> torch.Tensor:
        return alignment_loss(spec, entries, (images + d).clamp(0.0, 1.0), stats)

    with torch.no_grad():
        current = float(loss_at(delta))
    initial = current
    step = cfg.align_step_size
    for _ in range(cfg.align_steps):
        if current == 0.0:
            break
        trial = delta.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(loss_at(trial), trial)
        scale = grad.abs().max()
        if not torch.isfinite(scale) or scale == 0:
            break
        with torch.no_grad():
            candidate = (images + delta - step * grad / scale).clamp(0.0, 1.0) - images
            if cfg.perturbation_bound is not None:
                candidate = candidate.clamp(-cfg.perturbation_bound, cfg.perturbation_bound)
            value = float(loss_at(candidate))
        if value <= current:
            delta, current = candidate, value
        else:
            step *= 0.5
    return AlignedBatch(images, delta, current, initial)


class EMA:
    """Shadow copy of selected entries updated as ``decay * shadow + (1 - decay) * value``."""

    def __init__(self, initial: Mapping[str, torch.Tensor], decay: float, names: Sequence[str]) -> None:
        self.decay = decay
        self.shadow: Dict[str, torch.Tensor] = {n: initial[n].detach().clone() for n in names}

    def update(self, values: Mapping[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name in self.shadow:
                self.shadow[name] = (1.0 - self.decay) * values[name].detach() + self.decay * self.shadow[name]


def trainable_names(spec: ModelSpec, layers: Optional[Sequence[str]] = None) -> List[str]:
    groups = layer_entries(spec)
    chosen = groups if layers is None else {k: v for k, v in groups.items() if k in set(layers)}
    return [n for group in chosen.values() for n in group]


def retain_loss(spec: ModelSpec, entries: Mapping[str, torch.Tensor], batch, prompts: str) -> torch.Tensor:
    """Contrastive loss of a retain batch in the ``prompts`` label space(s)."""
    if prompts == "both":
        return label_space_loss(spec, entries, batch, "coarse") + label_space_loss(spec, entries, batch, "fine")
    return label_space_loss(spec, entries, batch, prompts)


def remind_stage(
    forgotten: ParameterSet,
    original: ParameterSet,
    task: UnlearnTask,
    cfg: StageConfig,
    selected_layers: Optional[Sequence[str]] = None,
    log: Optional[StageLog] = None,
) -> ParameterSet:
    """Recover retain-set knowledge lost while forgetting.

    Args:
        forgotten: Output of the forgetting stage (fine-tuning start point).
        original: Source of the BN statistics and of the EMA start point.
        task: Provides the retain set D^r (and D^f when
            ``cfg.forget_weight`` is positive).
        cfg: Stage hyper-parameters (``ema_decay``, alignment settings,
            ``restrict_to_selected``, ``prompts``, ``forget_weight``).
        selected_layers: Layers to fine-tune when ``cfg.restrict_to_selected``.
        log: Optional stage log.

    Returns:
        The EMA parameters tagged ``reminded``.

    Raises:
        ConfigurationError: If D^r is empty, or D^f is empty while
            ``cfg.forget_weight`` is positive.
        TrainingFailure: If the loss becomes non-finite.
    """
    forgotten.check_compatible(original)
    retain = task.retain_set
    if len(retain) == 0:
        raise ConfigurationError("retain set is empty")
    if cfg.forget_weight > 0 and len(task.forget_set) == 0:
        raise ConfigurationError("forget_weight > 0 needs a non-empty forget set")
    spec = forgotten.spec
    start = time.perf_counter()
    if cfg.restrict_to_selected:
        if not selected_layers:
            raise ConfigurationError("restrict_to_selected needs the selected layers")
        train_names = trainable_names(spec, selected_layers)
    else:
        train_names = trainable_names(spec)
    entries = forgotten.as_dict()
    leaves = {n: entries[n].clone().requires_grad_(True) for n in train_names}
    entries.update(leaves)
    optimizer = torch.optim.Adam(list(leaves.values()), lr=cfg.learning_rate)
    # the average covers every image-tower weight so that decay 1 returns the original exactly
    ema = EMA(original.as_dict(), cfg.ema_decay, trainable_names(spec))
    gen = torch.Generator().manual_seed(cfg.seed)
    forget_batches: Iterator = iter(())
    if cfg.forget_weight > 0:
        fgen = torch.Generator().manual_seed(derive_seed(cfg.seed, "remind:forget"))
        forget_batches = cycle_batches(task.forget_set, cfg.batch_size, cfg.steps, fgen)
    align_gains: List[float] = []
    similarity = None
    logger.info("remind: %d steps on %d examples (align=%s, prompts=%s)", cfg.steps, len(retain), cfg.align,
                cfg.prompts)
    for step, batch in enumerate(cycle_batches(retain, cfg.batch_size, cfg.steps, gen)):
        if cfg.align and len(batch) >= 2:
            aligned = align_batch(original, batch.images, cfg)
            align_gains.append(aligned.initial_loss - aligned.loss)
            batch = batch.with_images(aligned.aligned)
        loss = retain_loss(spec, entries, batch, cfg.prompts)
        if cfg.forget_weight > 0:
            similarity = forget_similarity(spec, entries, next(forget_batches))
            loss = loss + cfg.forget_weight * similarity
        if not torch.isfinite(loss):
            raise TrainingFailure("remind", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        ema.update(entries)
        if log is not None:
            log.record(loss.item())
        logger.debug("remind step %d loss %.5f", step, loss.item())
    updates = {n: t for n, t in ema.shadow.items()}
    reminded = forgotten.replace(updates, provenance="reminded", stage="remind")
    if log is not None:
        log.values.update(
            ema_decay=cfg.ema_decay,
            trained_entries=len(train_names),
            mean_alignment_gain=(sum(align_gains) / len(align_gains)) if align_gains else 0.0,
        )
        if similarity is not None:
            log.values["final_forget_similarity"] = similarity.item()
        log.seconds = time.perf_counter() - start
    return reminded
