"""Progressive unsupervised fine-tuning of the temporal modules.

The canonical schedule runs three steps, training one module per step
from the bottom of the pyramid up (level 3, then 2, then 1). Before each
step the current denoiser regenerates pseudo noisy-clean pairs; during a
step only the target module's parameters receive gradients (everything
else stays bitwise frozen). Ablation modes mirror the alternatives:
``all_params`` unfreezes the whole network at each step,
``joint_modules`` trains all three modules together for three rounds,
``repeat_twice`` runs the progressive pass twice.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .backbone import pad_to_multiple
from .errors import ConfigurationError, NumericError
from .noise import NoiseModel, PseudoPairSet, make_pseudo_pairs
from .video import VideoDenoiser, window_indices

logger = logging.getLogger(__name__)

MODES = ("progressive", "all_params", "joint_modules", "repeat_twice")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def cosine_lr(iteration: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing hitting lr_start at iteration 0 and lr_end at the
    last iteration exactly."""
    if total <= 1:
        return lr_start
    t = iteration / (total - 1)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * t))


@dataclass
class StepSpec:
    """One fine-tuning step: which module to unfreeze and how to train it."""

    target_level: int | None        # pyramid level of the module, None = all three
    iterations: int
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    batch: int = 4
    patch: int = 160

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ConfigurationError("need lr_start >= lr_end > 0")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")


@dataclass
class FinetuneSchedule:
    steps: list = field(default_factory=list)
    mode: str = "progressive"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown fine-tuning mode {self.mode!r}")
        if not self.steps:
            raise ConfigurationError("schedule has no steps")
        if any(s.iterations <= 0 for s in self.steps):
            raise ConfigurationError("every scheduled step needs iterations > 0")
        if self.mode in ("progressive", "all_params"):
            if [s.target_level for s in self.steps] != [3, 2, 1]:
                raise ConfigurationError(f"{self.mode} mode must target levels 3 -> 2 -> 1")
        elif self.mode == "repeat_twice":
            if [s.target_level for s in self.steps] != [3, 2, 1, 3, 2, 1]:
                raise ConfigurationError("repeat_twice mode runs levels 3,2,1 twice")
        else:
            if any(s.target_level is not None for s in self.steps):
                raise ConfigurationError("joint_modules steps must not target a single level")


def build_schedule(mode: str = "progressive", iterations: int = 200_000,
                   lr_start: float = 1e-3, lr_end: float = 1e-5,
                   batch: int = 4, patch: int = 160) -> FinetuneSchedule:
    """Standard schedules for each mode with shared per-step settings."""
    def step(level):
        return StepSpec(target_level=level, iterations=iterations,
                        lr_start=lr_start, lr_end=lr_end, batch=batch, patch=patch)
    if mode in ("progressive", "all_params"):
        levels = [3, 2, 1]
    elif mode == "repeat_twice":
        levels = [3, 2, 1, 3, 2, 1]
    elif mode == "joint_modules":
        levels = [None, None, None]
    else:
        raise ConfigurationError(f"unknown fine-tuning mode {mode!r}")
    return FinetuneSchedule(steps=[step(l) for l in levels], mode=mode)


def select_trainable(model: VideoDenoiser, mode: str, target_level: int | None):
    """Freeze/unfreeze parameters for one step; returns the live ones."""
    if mode == "all_params":
        wanted = lambda name: True
    elif mode == "joint_modules":
        wanted = lambda name: name.startswith(("tm1.", "tm2.", "tm3."))
    else:
        prefix = f"tm{target_level}."
        wanted = lambda name: name.startswith(prefix)
    params = []
    for name, p in model.named_parameters():
        live = wanted(name)
        p.requires_grad_(live)
        if live:
            params.append(p)
    return params


def _pad_to_min(frames: torch.Tensor, patch: int) -> torch.Tensor:
    h, w = frames.shape[-2:]
    if h >= patch and w >= patch:
        return frames
    ph, pw = max(0, patch - h), max(0, patch - w)
    mode = "reflect" if (ph < h and pw < w) else "replicate"
    return F.pad(frames, (0, pw, 0, ph), mode=mode)


def sample_batch(pairs: Sequence[PseudoPairSet], generator: torch.Generator,
                 patch: int, frames: int, batch: int):
    """Uniformly sample (video, time, crop) and cut aligned windows.

    Returns (inputs (B,T,C,p,p), targets (B,C,p,p)); the same crop is
    applied to every frame of a window and to its pseudo-clean target.
    """
    inputs, targets = [], []
    for _ in range(batch):
        v = int(torch.randint(len(pairs), (1,), generator=generator))
        pair = pairs[v]
        noisy = _pad_to_min(pair.noisy, patch)
        clean = _pad_to_min(pair.clean, patch)
        n, _, h, w = noisy.shape
        t = int(torch.randint(n, (1,), generator=generator))
        y0 = int(torch.randint(h - patch + 1, (1,), generator=generator))
        x0 = int(torch.randint(w - patch + 1, (1,), generator=generator))
        idx = window_indices(t, n, frames)
        inputs.append(noisy[idx, :, y0:y0 + patch, x0:x0 + patch])
        targets.append(clean[t, :, y0:y0 + patch, x0:x0 + patch])
    return torch.stack(inputs), torch.stack(targets)


def resample_pairs(pairs: Sequence[PseudoPairSet],
                   generator: torch.Generator | None = None):
    """Fresh recorruption of the existing pseudo-clean videos (the
    optional resample-per-epoch behavior; pseudo-clean stays fixed)."""
    return [PseudoPairSet(clean=p.clean,
                          noisy=p.clean + p.model.sample(p.clean, generator),
                          source_step=p.source_step, model=p.model)
            for p in pairs]


def finetune_step(model: VideoDenoiser, pairs: Sequence[PseudoPairSet], step: StepSpec,
                  mode: str = "progressive",
                  generator: torch.Generator | None = None,
                  log_every: int = 0, resample_every: int = 0):
    """Train one step's parameters on the pseudo pairs with Adam + cosine
    annealing and an L1 objective; increments the model's step index.

    The recorruption realization is fixed for the whole step unless
    ``resample_every`` > 0, which redraws it every that many iterations.
    Returns the training curve as (iteration, loss, lr) rows. A
    non-finite loss restores the step-start parameters and raises
    NumericError.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    snapshot = {k: v.detach().clone() for k, v in model.state_dict().items()}
    params = select_trainable(model, mode, step.target_level)
    opt = torch.optim.Adam(params, lr=step.lr_start, betas=ADAM_BETAS, eps=ADAM_EPS)
    curve = []
    try:
        for it in range(step.iterations):
            lr = cosine_lr(it, step.iterations, step.lr_start, step.lr_end)
            for group in opt.param_groups:
                group["lr"] = lr
            if resample_every and it and it % resample_every == 0:
                pairs = resample_pairs(pairs, generator)
            inputs, targets = sample_batch(pairs, generator, step.patch, model.frames,
                                           step.batch)
            pred = model(inputs)
            loss = F.l1_loss(pred, targets)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at iteration {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append((it, loss.item(), lr))
            if log_every and (it % log_every == 0 or it == step.iterations - 1):
                logger.info("iter %d/%d loss %.5f lr %.2e", it, step.iterations,
                            loss.item(), lr)
    except NumericError:
        model.load_state_dict(snapshot)
        raise
    if mode == "joint_modules":
        model.step_index = 3
    else:
        model.step_index = min(model.step_index + 1, 3)
    return curve


def regenerate_pairs(model: VideoDenoiser, noisy_videos: Sequence[torch.Tensor],
                     noise_model: NoiseModel, generator: torch.Generator,
                     source_step: int):
    """Pseudo pairs from the current denoiser. At step 1 the gates are
    still zero, so this is exactly the frame-by-frame image denoiser."""
    was_training = model.training
    model.eval()
    pairs = [make_pseudo_pairs(video, model.denoise_video, noise_model, generator,
                               source_step=source_step)
             for video in noisy_videos]
    if was_training:
        model.train()
    return pairs


def step_seed(seed: int, step: int) -> int:
    """Derived RNG seed for one schedule step: resuming a killed run from
    the last step checkpoint replays the remaining steps bit-for-bit."""
    return (seed * 1_000_003 + step * 7919) % (2 ** 62)


def run_schedule(model: VideoDenoiser, noisy_videos: Sequence[torch.Tensor],
                 noise_model: NoiseModel, schedule: FinetuneSchedule,
                 seed: int = 0,
                 save_step: Callable[[int, VideoDenoiser], None] | None = None,
                 validate: Callable[[VideoDenoiser], float] | None = None,
                 log_every: int = 0, start_step: int = 1, resample_every: int = 0):
    """Run a full fine-tuning schedule, regenerating pseudo pairs before
    every step. ``start_step`` resumes after that many completed steps.
    Returns {step -> {"curve": rows, "psnr": float|None}}.
    """
    if schedule.mode in ("progressive", "repeat_twice"):
        expected = min(start_step - 1, 3)
        if model.step_index != expected:
            raise ConfigurationError(
                f"schedule step {start_step} expects a model at fine-tuning step "
                f"{expected}, got {model.step_index}"
            )
    if not noisy_videos:
        raise ConfigurationError("no videos to fine-tune on")
    history = {}
    for k, step in enumerate(schedule.steps, start=1):
        if k < start_step:
            continue
        gen = torch.Generator().manual_seed(step_seed(seed, k))
        source_step = min(model.step_index + 1, 3)
        pairs = regenerate_pairs(model, noisy_videos, noise_model, gen, source_step)
        label = f"level {step.target_level}" if step.target_level else "all modules"
        logger.info("fine-tuning step %d (%s, %d iterations)", k, label, step.iterations)
        curve = finetune_step(model, pairs, step, mode=schedule.mode,
                              generator=gen, log_every=log_every,
                              resample_every=resample_every)
        entry = {"curve": curve, "psnr": None, "target_level": step.target_level}
        if validate is not None:
            model.eval()
            entry["psnr"] = validate(model)
            logger.info("step %d validation PSNR %.3f dB", k, entry["psnr"])
        if save_step is not None:
            save_step(k, model)
        history[k] = entry
    return history


def write_training_curve(rows, path) -> None:
    """Persist (iteration, loss, lr) rows as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr"])
        for it, loss, lr in rows:
            writer.writerow([it, f"{loss:.8f}", f"{lr:.10e}"])


def run_progressive(model: VideoDenoiser, noisy_videos, noise_model: NoiseModel,
                    schedule: FinetuneSchedule | None = None, **kwargs):
    """Canonical 3-step bottom-to-top fine-tuning (Table-style trajectory)."""
    if schedule is None:
        schedule = build_schedule("progressive")
    if schedule.mode not in ("progressive", "repeat_twice"):
        raise ConfigurationError("run_progressive requires a progressive-style schedule")
    return run_schedule(model, noisy_videos, noise_model, schedule, **kwargs)


def run_ablation_mode(model: VideoDenoiser, noisy_videos, noise_model: NoiseModel,
                      mode: str, schedule: FinetuneSchedule | None = None, **kwargs):
    """Table-4-style alternatives: all_params or joint_modules."""
    if mode not in ("all_params", "joint_modules"):
        raise ConfigurationError(f"not an ablation mode: {mode!r}")
    if schedule is None:
        schedule = build_schedule(mode)
    if schedule.mode != mode:
        raise ConfigurationError("schedule mode does not match requested mode")
    return run_schedule(model, noisy_videos, noise_model, schedule, **kwargs)
