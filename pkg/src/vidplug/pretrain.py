"""Desk-scale blind Gaussian pretraining of the image denoiser.

Trains on clean images corrupted on the fly with AWGN whose level is
drawn uniformly per sample from a range, so the denoiser never sees the
noise level as an input. This stands in for a large externally trained
model; full-size weights can equally be imported via the checkpoint
format.
"""

from __future__ import annotations

import logging
from typing import Sequence

import torch
import torch.nn.functional as F

from .backbone import ImageDenoiser
from .errors import ConfigurationError, NumericError
from .finetune import ADAM_BETAS, ADAM_EPS, cosine_lr
from .metrics import psnr

logger = logging.getLogger(__name__)


def _random_crop(image: torch.Tensor, patch: int, generator: torch.Generator):
    _, h, w = image.shape
    if h < patch or w < patch:
        ph, pw = max(0, patch - h), max(0, patch - w)
        image = F.pad(image.unsqueeze(0), (0, pw, 0, ph), mode="replicate").squeeze(0)
        _, h, w = image.shape
    y0 = int(torch.randint(h - patch + 1, (1,), generator=generator))
    x0 = int(torch.randint(w - patch + 1, (1,), generator=generator))
    return image[:, y0:y0 + patch, x0:x0 + patch]


def pretrain_image_denoiser(model: ImageDenoiser, corpus: Sequence[torch.Tensor],
                            iterations: int, batch: int = 8, patch: int = 48,
                            lr_start: float = 1e-3, lr_end: float = 1e-5,
                            sigma_range: tuple[float, float] = (10 / 255, 55 / 255),
                            generator: torch.Generator | None = None,
                            start_iteration: int = 0, log_every: int = 0):
    """L1 training against on-the-fly AWGN corruption of clean crops.

    ``start_iteration`` supports resuming: the cosine schedule and the
    iteration counter continue from there up to ``iterations`` total.
    Returns (iteration, loss, lr) curve rows for the trained span.
    """
    if not corpus:
        raise ConfigurationError("empty clean-image corpus")
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    lo, hi = sigma_range
    if not (0 <= lo <= hi):
        raise ConfigurationError(f"bad sigma range {sigma_range}")
    opt = torch.optim.Adam(model.parameters(), lr=lr_start, betas=ADAM_BETAS, eps=ADAM_EPS)
    curve = []
    model.train()
    for it in range(start_iteration, iterations):
        lr = cosine_lr(it, iterations, lr_start, lr_end)
        for group in opt.param_groups:
            group["lr"] = lr
        clean = []
        for _ in range(batch):
            idx = int(torch.randint(len(corpus), (1,), generator=generator))
            clean.append(_random_crop(corpus[idx], patch, generator))
        clean = torch.stack(clean)
        sigma = lo + (hi - lo) * torch.rand((batch, 1, 1, 1), generator=generator)
        noisy = clean + torch.randn(clean.shape, generator=generator) * sigma
        pred = model(noisy)
        loss = F.l1_loss(pred, clean)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite pretraining loss at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((it, loss.item(), lr))
        if log_every and (it % log_every == 0 or it == iterations - 1):
            logger.info("pretrain iter %d/%d loss %.5f lr %.2e", it, iterations,
                        loss.item(), lr)
    model.eval()
    return curve


@torch.no_grad()
def validate_image_denoiser(model: ImageDenoiser, clean_images: Sequence[torch.Tensor],
                            sigma: float, generator: torch.Generator | None = None):
    """Mean PSNR of denoised vs clean, plus the noisy-input baseline."""
    if generator is None:
        generator = torch.Generator().manual_seed(123)
    was_training = model.training
    model.eval()
    noisy_psnr, denoised_psnr = [], []
    for clean in clean_images:
        noisy = clean + torch.randn(clean.shape, generator=generator) * sigma
        out = model.denoise_image(noisy)
        noisy_psnr.append(psnr(noisy.clamp(0, 1), clean))
        denoised_psnr.append(psnr(out, clean))
    if was_training:
        model.train()
    return (sum(denoised_psnr) / len(denoised_psnr),
            sum(noisy_psnr) / len(noisy_psnr))
