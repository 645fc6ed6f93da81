"""4-level encoder-decoder image denoiser used as the frozen spatial prior.

The network predicts a residual on top of the input frame (global skip).
Two residual block styles are available: ``nafnet`` (layer norm, pointwise
and depthwise convs, simple gating, channel attention) for the full-size
profile, and ``plain`` (conv-relu-conv) for the small desk profile. The
spec of the surrounding system is block-agnostic, so both satisfy the
same contracts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, NumericError

FULL_CHANNELS = [64, 128, 256, 512]
FULL_ENC_BLOCKS = [2, 2, 4, 6]
FULL_DEC_BLOCKS = [2, 2, 2]

DESK_CHANNELS = [8, 16, 32, 64]
DESK_ENC_BLOCKS = [1, 1, 1, 1]
DESK_DEC_BLOCKS = [1, 1, 1]


@dataclass
class DenoiserConfig:
    """Shape/profile description of the image denoiser backbone."""

    in_channels: int = 3
    out_channels: int = 3
    channels: list[int] = field(default_factory=lambda: list(DESK_CHANNELS))
    enc_blocks: list[int] = field(default_factory=lambda: list(DESK_ENC_BLOCKS))
    dec_blocks: list[int] = field(default_factory=lambda: list(DESK_DEC_BLOCKS))
    profile: str = "desk"
    block_style: str = "plain"

    levels: int = 4

    def __post_init__(self):
        if self.levels != 4:
            raise ConfigurationError("levels is fixed at 4")
        if len(self.channels) != 4 or len(self.enc_blocks) != 4 or len(self.dec_blocks) != 3:
            raise ConfigurationError(
                "expected 4 channel widths, 4 encoder block counts, 3 decoder block counts"
            )
        if self.profile not in ("full", "desk"):
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        if self.block_style not in ("nafnet", "plain"):
            raise ConfigurationError(f"unknown block_style {self.block_style!r}")
        if self.profile == "full":
            if self.channels != FULL_CHANNELS or self.enc_blocks != FULL_ENC_BLOCKS \
                    or self.dec_blocks != FULL_DEC_BLOCKS:
                raise ConfigurationError(
                    "full profile requires channels [64,128,256,512], "
                    "enc_blocks [2,2,4,6], dec_blocks [2,2,2]"
                )
        else:
            if any(c < 4 for c in self.channels):
                raise ConfigurationError("desk profile requires every channel width >= 4")
            if any(b < 1 for b in self.enc_blocks) or any(b < 1 for b in self.dec_blocks):
                raise ConfigurationError("desk profile requires every block count >= 1")

    @classmethod
    def full(cls, in_channels=3, out_channels=3):
        return cls(in_channels=in_channels, out_channels=out_channels,
                   channels=list(FULL_CHANNELS), enc_blocks=list(FULL_ENC_BLOCKS),
                   dec_blocks=list(FULL_DEC_BLOCKS), profile="full", block_style="nafnet")

    @classmethod
    def desk(cls, in_channels=3, out_channels=3, channels=None, enc_blocks=None,
             dec_blocks=None, block_style="plain"):
        return cls(in_channels=in_channels, out_channels=out_channels,
                   channels=list(channels or DESK_CHANNELS),
                   enc_blocks=list(enc_blocks or DESK_ENC_BLOCKS),
                   dec_blocks=list(dec_blocks or DESK_DEC_BLOCKS),
                   profile="desk", block_style=block_style)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


class LayerNorm2d(nn.Module):
    """Channel-wise layer norm for NCHW maps."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class SimpleGate(nn.Module):
    def forward(self, x):
        a, b = x.chunk(2, dim=1)
        return a * b


class NAFBlock(nn.Module):
    """Simplified-gating restoration block: LN, 1x1/3x3-depthwise convs,
    simple gate, channel attention, plus a gated pointwise FFN."""

    def __init__(self, channels, expand=2):
        super().__init__()
        wide = channels * expand
        self.norm1 = LayerNorm2d(channels)
        self.conv1 = nn.Conv2d(channels, wide, 1)
        self.conv2 = nn.Conv2d(wide, wide, 3, padding=1, groups=wide)
        self.sca = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(wide // 2, wide // 2, 1),
        )
        self.conv3 = nn.Conv2d(wide // 2, channels, 1)

        self.norm2 = LayerNorm2d(channels)
        self.conv4 = nn.Conv2d(channels, wide, 1)
        self.conv5 = nn.Conv2d(wide // 2, channels, 1)

        self.gate = SimpleGate()
        self.scale1 = nn.Parameter(torch.zeros(channels))
        self.scale2 = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        y = self.conv2(self.conv1(self.norm1(x)))
        y = self.gate(y)
        y = y * self.sca(y)
        y = self.conv3(y)
        x = x + y * self.scale1.view(1, -1, 1, 1)

        y = self.gate(self.conv4(self.norm2(x)))
        y = self.conv5(y)
        return x + y * self.scale2.view(1, -1, 1, 1)


class PlainBlock(nn.Module):
    """conv-relu-conv residual block for the desk profile."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


def _make_blocks(style, channels, count):
    block = NAFBlock if style == "nafnet" else PlainBlock
    return nn.Sequential(*[block(channels) for _ in range(count)])


def pad_to_multiple(x: torch.Tensor, multiple: int = 8):
    """Reflect-pad the last two dims up to the next multiple.

    Returns the padded tensor and the original (H, W) for cropping back.
    Falls back to replicate padding when a dim is too small to reflect.
    """
    h, w = x.shape[-2], x.shape[-1]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if (ph < h and pw < w) else "replicate"
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    x = F.pad(x, (0, pw, 0, ph), mode=mode)
    if squeeze:
        x = x.squeeze(0)
    return x, (h, w)


def crop_to(x: torch.Tensor, size):
    h, w = size
    return x[..., :h, :w]


class ImageDenoiser(nn.Module):
    """Encoder-decoder denoiser with per-level skip connections.

    ``encode`` exposes the level-1..3 skip features plus the level-4 input
    so that temporal modules can be spliced in by the video denoiser.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        style = cfg.block_style

        self.intro = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.enc1 = _make_blocks(style, ch[0], cfg.enc_blocks[0])
        self.down1 = nn.Conv2d(ch[0], ch[1], 2, stride=2)
        self.enc2 = _make_blocks(style, ch[1], cfg.enc_blocks[1])
        self.down2 = nn.Conv2d(ch[1], ch[2], 2, stride=2)
        self.enc3 = _make_blocks(style, ch[2], cfg.enc_blocks[2])
        self.down3 = nn.Conv2d(ch[2], ch[3], 2, stride=2)
        self.middle = _make_blocks(style, ch[3], cfg.enc_blocks[3])

        # 2x upsampling: 1x1 conv to 4*C then pixel shuffle
        self.up3 = nn.Sequential(nn.Conv2d(ch[3], ch[2] * 4, 1, bias=False), nn.PixelShuffle(2))
        self.dec3 = _make_blocks(style, ch[2], cfg.dec_blocks[2])
        self.up2 = nn.Sequential(nn.Conv2d(ch[2], ch[1] * 4, 1, bias=False), nn.PixelShuffle(2))
        self.dec2 = _make_blocks(style, ch[1], cfg.dec_blocks[1])
        self.up1 = nn.Sequential(nn.Conv2d(ch[1], ch[0] * 4, 1, bias=False), nn.PixelShuffle(2))
        self.dec1 = _make_blocks(style, ch[0], cfg.dec_blocks[0])

        self.ending = nn.Conv2d(ch[0], cfg.out_channels, 3, padding=1)

    def encode(self, frame: torch.Tensor):
        """Run the encoder on a (B,C,H,W) frame padded to divisibility-8.

        Returns (skips, bottom): skips = [level-1, level-2, level-3]
        feature maps, bottom = the level-4 input.
        """
        if frame.shape[-3] != self.cfg.in_channels:
            raise ConfigurationError(
                f"frame has {frame.shape[-3]} channels, config expects {self.cfg.in_channels}"
            )
        x = self.intro(frame)
        f1 = self.enc1(x)
        f2 = self.enc2(self.down1(f1))
        f3 = self.enc3(self.down2(f2))
        bottom = self.down3(f3)
        return [f1, f2, f3], bottom

    def decode(self, bottom: torch.Tensor, skips, frame: torch.Tensor) -> torch.Tensor:
        """Decode from the level-4 input; adds per-level skip inputs and
        the global residual. Raises NumericError naming the first level
        whose activations go non-finite."""
        x = self.middle(bottom)
        ups = [None, self.up1, self.up2, self.up3]
        decs = [None, self.dec1, self.dec2, self.dec3]
        for level in (3, 2, 1):
            x = ups[level](x) + skips[level - 1]
            x = decs[level](x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations in decoder level {level}")
        residual = self.ending(x)
        return frame + residual

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        """Full denoising pass with internal padding/cropping, no clamping."""
        squeeze = frame.dim() == 3
        if squeeze:
            frame = frame.unsqueeze(0)
        padded, size = pad_to_multiple(frame)
        skips, bottom = self.encode(padded)
        out = self.decode(bottom, skips, padded)
        out = crop_to(out, size)
        return out.squeeze(0) if squeeze else out

    @torch.no_grad()
    def denoise_image(self, frame: torch.Tensor) -> torch.Tensor:
        """Inference entry point: denoise one frame and clamp to [0,1]."""
        return self.forward(frame).clamp_(0.0, 1.0)


def build_image_denoiser(cfg: DenoiserConfig, seed: int | None = None) -> ImageDenoiser:
    """Construct the denoiser, optionally under a fixed RNG seed so that
    the random initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return ImageDenoiser(cfg)
