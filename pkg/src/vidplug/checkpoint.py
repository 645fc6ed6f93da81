"""Versioned checkpoint container for image and video denoisers.

A checkpoint is a torch.save archive holding the raw parameter tensors
plus a JSON-encodable metadata block: model kind, backbone config,
fine-tuning step index, per-tensor frozen flags, the noise model in
effect, and free-form extras. Round trips are bit-exact; loading an
image checkpoint into a video denoiser copies the backbone and leaves
the temporal modules at their fresh, zero-gate initialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .backbone import DenoiserConfig, ImageDenoiser, build_image_denoiser
from .errors import CheckpointMismatchError, ConfigurationError
from .noise import noise_model_from_dict, noise_model_to_dict
from .video import VideoDenoiser

FORMAT_VERSION = 1
UPSAMPLE_KIND = "pixel_shuffle"


@dataclass
class Checkpoint:
    kind: str                      # "image" | "video"
    config: DenoiserConfig
    state_dict: dict
    step_index: int
    frozen_flags: dict
    noise_model: object | None
    frames: int | None
    extra: dict

    def build_image_denoiser(self) -> ImageDenoiser:
        model = ImageDenoiser(self.config)
        if self.kind == "image":
            model.load_state_dict(self.state_dict)
        else:
            backbone = {k[len("backbone."):]: v for k, v in self.state_dict.items()
                        if k.startswith("backbone.")}
            model.load_state_dict(backbone)
        _apply_frozen(model, self.frozen_flags, prefix="backbone." if self.kind == "video" else "")
        return model

    def build_video_denoiser(self, frames: int | None = None) -> VideoDenoiser:
        if frames is None:
            frames = self.frames if self.frames is not None else 5
        if self.kind == "video" and self.frames is not None and frames != self.frames:
            raise ConfigurationError(
                f"checkpoint was trained with {self.frames}-frame windows, requested {frames}"
            )
        if self.kind == "video":
            model = VideoDenoiser(ImageDenoiser(self.config), frames=frames)
            model.load_state_dict(self.state_dict)
            model.step_index = self.step_index
            _apply_frozen(model, self.frozen_flags)
        else:
            # fresh temporal modules (zero gates), backbone copied over
            model = VideoDenoiser(self.build_image_denoiser(), frames=frames)
            model.step_index = 0
        return model


def save_checkpoint(path, model, step_index: int | None = None, noise_model=None,
                    extra: dict | None = None) -> None:
    if isinstance(model, VideoDenoiser):
        kind, cfg = "video", model.backbone.cfg
        frames = model.frames
        if step_index is None:
            step_index = model.step_index
    elif isinstance(model, ImageDenoiser):
        kind, cfg = "image", model.cfg
        frames = None
        step_index = step_index or 0
    else:
        raise ConfigurationError(f"cannot checkpoint a {type(model).__name__}")
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": cfg.to_dict(),
        "step_index": step_index,
        "frames": frames,
        "upsample": UPSAMPLE_KIND,
        "frozen_flags": {name: not p.requires_grad for name, p in model.named_parameters()},
        "noise_model": noise_model_to_dict(noise_model) if noise_model is not None else None,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"meta": meta, "tensors": model.state_dict()}, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = blob["meta"]
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version {version}")
    nm = meta.get("noise_model")
    return Checkpoint(
        kind=meta["kind"],
        config=DenoiserConfig.from_dict(meta["config"]),
        state_dict=blob["tensors"],
        step_index=meta["step_index"],
        frozen_flags=meta.get("frozen_flags", {}),
        noise_model=noise_model_from_dict(nm) if nm else None,
        frames=meta.get("frames"),
        extra=meta.get("extra", {}),
    )


def check_config_match(expected: DenoiserConfig, stored: DenoiserConfig) -> None:
    """Raise CheckpointMismatchError naming every differing config field."""
    diffs = [name for name, val in expected.to_dict().items()
             if stored.to_dict()[name] != val]
    if diffs:
        raise CheckpointMismatchError(diffs)


def _apply_frozen(model, flags: dict, prefix: str = "") -> None:
    for name, p in model.named_parameters():
        key = prefix + name
        if key in flags:
            p.requires_grad_(not flags[key])
