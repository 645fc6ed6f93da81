"""Known noise models and pseudo noisy-clean pair construction.

Two corruption models are supported: additive white Gaussian noise with
a fixed standard deviation, and signal-dependent Poisson-Gaussian noise
alpha * P(x / alpha) - x + N(0, delta^2), whose per-pixel variance is
alpha * x + delta^2. Both are zero-mean. Pseudo supervision pairs are
built by denoising a noisy video with the current denoiser (the pseudo
clean, clamped to [0,1]) and recorrupting it with a sample from the
known model; the recorrupted video is deliberately left unclamped so
the loss sees the true noise statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import torch

from .errors import ConfigurationError, DataError


def sample_awgn(shape, sigma: float, generator: torch.Generator | None = None,
                dtype=torch.float32) -> torch.Tensor:
    """i.i.d. zero-mean Gaussian noise with standard deviation sigma."""
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    return torch.randn(shape, generator=generator, dtype=dtype) * sigma


def sample_poisson_gaussian(clean: torch.Tensor, alpha: float, delta: float,
                            generator: torch.Generator | None = None) -> torch.Tensor:
    """Zero-mean Poisson-Gaussian noise for intensities in [0,1].

    alpha == 0 degenerates to pure Gaussian read noise of std delta.
    """
    if alpha < 0 or delta < 0:
        raise ConfigurationError("alpha and delta must be >= 0")
    read = torch.randn(clean.shape, generator=generator, dtype=clean.dtype) * delta
    if alpha == 0:
        return read
    shot = alpha * torch.poisson(clean.clamp(min=0) / alpha, generator=generator) - clean
    return shot + read


@dataclass(frozen=True)
class AWGN:
    sigma: float
    kind: str = "awgn"

    def sample(self, clean: torch.Tensor, generator: torch.Generator | None = None):
        return sample_awgn(clean.shape, self.sigma, generator, dtype=clean.dtype)


@dataclass(frozen=True)
class PoissonGaussian:
    alpha: float
    delta: float
    kind: str = "poisson_gaussian"

    def sample(self, clean: torch.Tensor, generator: torch.Generator | None = None):
        return sample_poisson_gaussian(clean, self.alpha, self.delta, generator)


NoiseModel = Union[AWGN, PoissonGaussian]


def noise_model_to_dict(model: NoiseModel) -> dict:
    if isinstance(model, AWGN):
        return {"kind": "awgn", "sigma": model.sigma}
    if isinstance(model, PoissonGaussian):
        return {"kind": "poisson_gaussian", "alpha": model.alpha, "delta": model.delta}
    raise ConfigurationError(f"unknown noise model {model!r}")


def noise_model_from_dict(d: dict) -> NoiseModel:
    kind = d.get("kind")
    if kind == "awgn":
        return AWGN(sigma=float(d["sigma"]))
    if kind == "poisson_gaussian":
        return PoissonGaussian(alpha=float(d["alpha"]), delta=float(d["delta"]))
    raise ConfigurationError(f"unknown noise model kind {kind!r}")


@dataclass
class PseudoPairSet:
    """One video's pseudo supervision pair plus its provenance."""

    clean: torch.Tensor            # (N, C, H, W), clamped to [0,1]
    noisy: torch.Tensor            # clean + sampled noise, unclamped
    source_step: int               # fine-tuning step these pairs feed
    model: NoiseModel

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape:
            raise DataError("pseudo clean and noisy videos must share shape")


def make_pseudo_pairs(noisy_video: torch.Tensor,
                      denoiser: Callable[[torch.Tensor], torch.Tensor],
                      model: NoiseModel,
                      generator: torch.Generator | None = None,
                      source_step: int = 1) -> PseudoPairSet:
    """Denoise a video, clamp it, and recorrupt with the known model.

    ``denoiser`` maps an (N, C, H, W) video to its denoised counterpart
    (the frame-by-frame image denoiser at step 1, the partially
    fine-tuned video denoiser afterwards).
    """
    clean = denoiser(noisy_video)
    if clean.shape != noisy_video.shape:
        raise DataError(
            f"denoiser returned shape {tuple(clean.shape)} for input {tuple(noisy_video.shape)}"
        )
    clean = clean.clamp(0.0, 1.0)
    recorrupted = clean + model.sample(clean, generator)
    return PseudoPairSet(clean=clean, noisy=recorrupted, source_step=source_step, model=model)


def load_calibration_table(path) -> dict[int, PoissonGaussian]:
    """ISO -> (alpha, delta) table from a JSON config, normalized units.

    Expected layout: {"1600": {"alpha": 0.012, "delta": 0.002}, ...}
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"calibration table not found: {path}")
    raw = json.loads(path.read_text())
    table = {}
    for iso, entry in raw.items():
        try:
            table[int(iso)] = PoissonGaussian(alpha=float(entry["alpha"]),
                                              delta=float(entry["delta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad calibration entry for ISO {iso}: {entry!r}") from exc
    return table
