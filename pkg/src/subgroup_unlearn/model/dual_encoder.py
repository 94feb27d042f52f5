"""Dual-encoder operations on parameter sets.

All functions are pure: they bind the entries of a
:class:`~subgroup_unlearn.model.params.ParameterSet` (or a plain mapping
of tensors that may require gradients) onto the cached evaluation-mode
template with ``torch.func.functional_call``. BatchNorm layers therefore
always use their running statistics here; only :func:`pretrain_toy`
runs a module in training mode.
"""

from __future__ import annotations

import logging
import time
from typing import Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch.func import functional_call

from ..core.errors import (
    ConfigurationError,
    CoverageError,
    DegenerateInputError,
    InputShapeError,
    TrainingFailure,
    VocabularyError,
)
from ..core.types import ModelSpec, StageLog, TrainConfig
from ..data.dataset import LabeledDataset, cycle_batches
from .architecture import DTYPE, build_module, state_entries, template
from .params import ParameterMeta, ParameterSet

logger = logging.getLogger(__name__)

EVAL_BATCH = 512
Entries = Mapping[str, torch.Tensor]


def _check_images(spec: ModelSpec, images: torch.Tensor) -> torch.Tensor:
    expected = (spec.in_channels, spec.image_size, spec.image_size)
    if images.dim() != 4 or tuple(images.shape[1:]) != expected:
        raise InputShapeError(
            f"images must have shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(images.shape)}"
        )
    return images.to(DTYPE)


def _check_prompts(spec: ModelSpec, prompt_ids: Union[torch.Tensor, Sequence[int]]) -> torch.Tensor:
    ids = torch.as_tensor(prompt_ids, dtype=torch.long).reshape(-1)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= len(spec.vocab)):
        raise VocabularyError(f"prompt index outside vocabulary of size {len(spec.vocab)}: {ids.tolist()}")
    return ids


def image_embeddings(spec: ModelSpec, entries: Entries, images: torch.Tensor) -> torch.Tensor:
    """Differentiable unit-norm image embeddings for raw ``entries``."""
    img, _ = functional_call(template(spec), dict(entries), (images,))
    return img


def text_embeddings(spec: ModelSpec, entries: Entries, prompt_ids: torch.Tensor) -> torch.Tensor:
    """Differentiable unit-norm text embeddings for raw ``entries``."""
    _, txt = functional_call(template(spec), dict(entries), (None, prompt_ids))
    return txt


def encode_image(params: ParameterSet, images: torch.Tensor) -> torch.Tensor:
    """Unit-norm image embeddings, evaluated in chunks.

    Raises:
        InputShapeError: If ``images`` does not match the model spec.
    """
    images = _check_images(params.spec, images)
    entries = params.as_dict()
    with torch.no_grad():
        chunks = [image_embeddings(params.spec, entries, images[i:i + EVAL_BATCH])
                  for i in range(0, images.shape[0], EVAL_BATCH)]
    if not chunks:
        return torch.zeros(0, params.spec.embed_dim, dtype=DTYPE)
    return torch.cat(chunks)


def encode_text(params: ParameterSet, prompt_ids: Union[torch.Tensor, Sequence[int]]) -> torch.Tensor:
    """Unit-norm text embeddings.

    Raises:
        VocabularyError: If an index is outside the vocabulary.
    """
    ids = _check_prompts(params.spec, prompt_ids)
    with torch.no_grad():
        return text_embeddings(params.spec, params.as_dict(), ids)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> float:
    """Cosine of the angle between two non-zero vectors, clamped to [-1, 1]."""
    a = torch.as_tensor(a, dtype=DTYPE).reshape(-1)
    b = torch.as_tensor(b, dtype=DTYPE).reshape(-1)
    na, nb = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    return float(torch.clamp(torch.dot(a, b) / (na * nb), -1.0, 1.0))


def similarity_matrix(image_emb: torch.Tensor, text_emb: torch.Tensor) -> torch.Tensor:
    return image_emb @ text_emb.T


def zero_shot_classify(
    params: ParameterSet,
    images: torch.Tensor,
    class_prompt_ids: Union[torch.Tensor, Sequence[int]],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Predict the class whose prompt embedding is most similar to each image.

    Args:
        params: Model parameters.
        images: ``(N, C, H, W)`` batch.
        class_prompt_ids: Vocabulary ids of the candidate classes.

    Returns:
        ``(predictions, similarities)``: indices into ``class_prompt_ids``
        (ties go to the lowest index) and the ``(N, n_classes)`` cosine
        similarity matrix.

    Raises:
        ConfigurationError: If no class prompt is given.
    """
    ids = _check_prompts(params.spec, class_prompt_ids)
    if ids.numel() == 0:
        raise ConfigurationError("zero-shot classification needs at least one class prompt")
    sims = similarity_matrix(encode_image(params, images), encode_text(params, ids))
    if sims.shape[0] == 0:
        return torch.zeros(0, dtype=torch.long), sims
    # argmax returns the first maximal index
    return torch.argmax(sims, dim=1), sims


def contrastive_loss(
    image_emb: torch.Tensor,
    text_emb: torch.Tensor,
    labels: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Symmetric image/text cross-entropy over candidate prompts.

    Args:
        image_emb: ``(N, D)`` unit-norm image embeddings.
        text_emb: ``(M, D)`` unit-norm embeddings of the candidate prompts.
        labels: ``(N,)`` index of each image's prompt among the candidates.
        temperature: Logit scale divisor.

    Returns:
        Mean of the image->text loss and the text->image loss. The
        text->image direction only covers candidates with at least one
        paired image and spreads its target uniformly over them.
    """
    logits = image_emb @ text_emb.T / temperature
    i2t = F.cross_entropy(logits, labels)
    positives = F.one_hot(labels, num_classes=text_emb.shape[0]).T.to(logits.dtype)
    present = positives.sum(dim=1) > 0
    targets = positives[present] / positives[present].sum(dim=1, keepdim=True)
    t2i = -(targets * F.log_softmax(logits.T[present], dim=1)).sum(dim=1).mean()
    return 0.5 * (i2t + t2i)


def in_batch_loss(spec: ModelSpec, entries: Entries, images: torch.Tensor, prompt_ids: torch.Tensor) -> torch.Tensor:
    """Contrastive loss against the distinct prompts present in the batch."""
    unique, labels = torch.unique(prompt_ids, sorted=True, return_inverse=True)
    img = image_embeddings(spec, entries, images)
    txt = text_embeddings(spec, entries, unique)
    return contrastive_loss(img, txt, labels, spec.temperature)


def label_space_loss(
    spec: ModelSpec,
    entries: Entries,
    batch: LabeledDataset,
    granularity: str,
) -> torch.Tensor:
    """Contrastive loss of a batch against every prompt of one label space."""
    candidates = batch.class_prompts(granularity)
    img = image_embeddings(spec, entries, batch.images)
    txt = text_embeddings(spec, entries, candidates)
    return contrastive_loss(img, txt, batch.labels(granularity), spec.temperature)


def init_parameters(spec: ModelSpec, seed: int) -> ParameterSet:
    """Default-initialized parameters drawn under ``seed`` (global RNG untouched)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = build_module(spec)
    return ParameterSet(state_entries(module), ParameterMeta(spec=spec, seed=seed, provenance="original"))


def _check_coverage(spec: ModelSpec, dataset: LabeledDataset) -> None:
    tax = dataset.taxonomy
    if tuple(tax.vocab()) != tuple(spec.vocab):
        raise VocabularyError("dataset taxonomy and model vocabulary disagree")
    seen = set(dataset.subgroup.tolist())
    missing = [tax.subgroup_names()[g] for g in range(tax.n_subgroups) if g not in seen]
    if missing:
        raise CoverageError("pre-training data misses vocabulary classes", missing)


def pretrain_toy(
    spec: ModelSpec,
    dataset: LabeledDataset,
    cfg: TrainConfig,
    log: Optional[StageLog] = None,
) -> ParameterSet:
    """Contrastively pre-train the dual encoder to obtain the original model.

    Each step draws a mini-batch and sums the in-batch contrastive losses
    against the superclass prompts and the subgroup prompts of its images.
    BatchNorm running statistics are updated with momentum 0.1.

    Raises:
        CoverageError: If a vocabulary class has no example.
        TrainingFailure: If the loss becomes non-finite.
    """
    _check_coverage(spec, dataset)
    initial = init_parameters(spec, cfg.seed)
    if cfg.steps == 0:
        return initial
    start = time.perf_counter()
    module = build_module(spec)
    module.load_state_dict(initial.as_dict(), strict=False)
    module.train()
    # the text table is trained only here; unlearning never touches it
    optimizer = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed)
    coarse = dataset.with_prompts("coarse")
    logger.info("pretrain: %d steps, batch %d, lr %g", cfg.steps, cfg.batch_size, cfg.learning_rate)
    for step, batch in enumerate(cycle_batches(coarse, cfg.batch_size, cfg.steps, gen)):
        if len(batch) < 2:
            continue
        img = module.encode_image(batch.images)
        loss = 0.0
        for granularity in ("coarse", "fine"):
            prompts = batch.with_prompts(granularity).prompts
            unique, labels = torch.unique(prompts, sorted=True, return_inverse=True)
            loss = loss + contrastive_loss(img, module.encode_text(unique), labels, spec.temperature)
        if not torch.isfinite(loss):
            raise TrainingFailure("pretrain", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if log is not None:
            log.record(loss.item())
        if step % 100 == 0:
            logger.debug("pretrain step %d loss %.5f", step, loss.item())
    module.eval()
    if log is not None:
        log.seconds = time.perf_counter() - start
    logger.info("pretrain finished in %.1fs", time.perf_counter() - start)
    return ParameterSet(state_entries(module), ParameterMeta(spec=spec, seed=cfg.seed, provenance="original"))
