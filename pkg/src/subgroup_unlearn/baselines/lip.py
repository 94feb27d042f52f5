"""LIP: shrink the local Lipschitz constant of the image tower on forget images.

For each forget image ``x`` and ``N`` noise draws ``e_i ~ N(0, sigma)``::

    L_emb = mean_i |g(x) - g(x + e_i)| / |e_i|
    L_cls = mean_i |l(x) - l(x + e_i)| / |e_i|

where ``g`` is the image embedding and ``l`` the zero-shot logits over
the superclass prompts. Both terms are weighted equally.
"""

from __future__ import annotations

from typing import Optional, Tuple

import torch

from ..core.types import BaselineConfig, ModelSpec, StageLog
from ..data.split import UnlearnTask
from ..model.dual_encoder import Entries, image_embeddings, text_embeddings
from ..model.params import ParameterSet
from .common import epochs_of, train_image_tower


def lip_terms(
    spec: ModelSpec,
    entries: Entries,
    images: torch.Tensor,
    noise: torch.Tensor,
    class_prompts: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """``(L_emb, L_cls)`` for images ``(B, ...)`` and noise ``(N, B, ...)``."""
    n_copies, batch = noise.shape[0], noise.shape[1]
    txt = text_embeddings(spec, entries, class_prompts)
    clean = image_embeddings(spec, entries, images)
    noisy = image_embeddings(spec, entries, (images.unsqueeze(0) + noise).reshape(-1, *images.shape[1:]))
    noisy = noisy.reshape(n_copies, batch, -1)
    scale = torch.linalg.vector_norm(noise.reshape(n_copies, batch, -1), dim=2)
    emb = torch.linalg.vector_norm(clean.unsqueeze(0) - noisy, dim=2) / scale
    logits_clean = clean @ txt.T / spec.temperature
    logits_noisy = noisy @ txt.T / spec.temperature
    cls = torch.linalg.vector_norm(logits_clean.unsqueeze(0) - logits_noisy, dim=2) / scale
    return emb.mean(), cls.mean()


def lip_baseline(
    original: ParameterSet, task: UnlearnTask, cfg: BaselineConfig, log: Optional[StageLog] = None
) -> ParameterSet:
    spec = original.spec
    gen = torch.Generator().manual_seed(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    batches = epochs_of(task.forget_set, cfg.batch_size, cfg.epochs, gen)

    def loss_fn(entries, batch):
        shape = (cfg.noise_copies,) + tuple(batch.images.shape)
        noise = cfg.noise_sigma * torch.randn(shape, generator=noise_gen, dtype=batch.images.dtype)
        emb, cls = lip_terms(spec, entries, batch.images, noise, batch.class_prompts("coarse"))
        return emb + cls

    return train_image_tower(original, batches, loss_fn, cfg, log)
