"""Video denoiser: an image denoiser with temporal modules at its skips.

Every frame of a T-frame window runs through the shared encoder; only
the central frame's features enter the level-4 bottleneck. The three
temporal modules run bottom-to-top (level 3 -> 2 -> 1), handing refined
offsets and aligned features upward, and their gated outputs replace the
skip contributions before the decoder reconstructs the central frame.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .alignment import TemporalModule, default_deform_groups
from .backbone import ImageDenoiser, crop_to, pad_to_multiple
from .errors import ConfigurationError

FULL_MAX_OFFSET = 32.0


def window_indices(t: int, n: int, frames: int) -> list[int]:
    """Frame indices of the window centered at t, reflected (without
    repeating the edge) and clamped at the video boundaries."""
    half = frames // 2
    out = []
    for d in range(-half, half + 1):
        j = t + d
        if j < 0:
            j = -j
        if j >= n:
            j = 2 * (n - 1) - j
        out.append(min(max(j, 0), n - 1))
    return out


class VideoDenoiser(nn.Module):
    """Image denoiser backbone plus gated temporal modules tm1..tm3.

    ``step_index`` counts completed fine-tuning steps (0..3); modules
    beyond it still carry their zero gate and fresh weights, so a
    step-0 state reproduces the image denoiser exactly.
    """

    def __init__(self, backbone: ImageDenoiser, frames: int = 5):
        super().__init__()
        if frames % 2 != 1 or frames < 1:
            raise ConfigurationError("frames must be odd and >= 1")
        self.backbone = backbone
        self.frames = frames
        self.step_index = 0

        cfg = backbone.cfg
        ch = cfg.channels
        max_off = FULL_MAX_OFFSET if cfg.profile == "full" else None
        groups = [default_deform_groups(c, cfg.profile) for c in ch[:3]]

        self.tm3 = TemporalModule(ch[2], frames, deform_groups=groups[2], max_offset=max_off)
        self.tm2 = TemporalModule(ch[1], frames, transfer_channels=ch[2],
                                  transfer_offset_channels=self.tm3.offset_channels,
                                  deform_groups=groups[1], max_offset=max_off)
        self.tm1 = TemporalModule(ch[0], frames, transfer_channels=ch[1],
                                  transfer_offset_channels=self.tm2.offset_channels,
                                  deform_groups=groups[0], max_offset=max_off)

    @property
    def cfg(self):
        return self.backbone.cfg

    def temporal_module(self, level: int) -> TemporalModule:
        return {1: self.tm1, 2: self.tm2, 3: self.tm3}[level]

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        """Denoise the central frame of each window, without clamping.

        windows: (B, T, C, H, W) or (T, C, H, W) in temporal order.
        """
        squeeze = windows.dim() == 4
        if squeeze:
            windows = windows.unsqueeze(0)
        if windows.shape[1] != self.frames:
            raise ConfigurationError(
                f"expected {self.frames}-frame windows, got {windows.shape[1]}"
            )
        center = self.frames // 2

        if self.training:
            # frames fold into the batch for throughput
            b, t, c, h, w = windows.shape
            flat, size = pad_to_multiple(windows.reshape(b * t, c, h, w))
            sk_flat, bot_flat = self.backbone.encode(flat)
            stacks = [s.view(b, t, *s.shape[1:]) for s in sk_flat]
            bottom = bot_flat.view(b, t, *bot_flat.shape[1:])[:, center]
            central_padded = flat.view(b, t, *flat.shape[1:])[:, center]

            def level_stack(level):
                return stacks[level - 1]
        else:
            # per-frame passes keep the central frame's path identical,
            # op for op, to the plain image denoiser (bitwise identity)
            skips = []
            bottom = None
            size = None
            central_padded = None
            for m in range(self.frames):
                frame, size = pad_to_multiple(windows[:, m])
                sk, bot = self.backbone.encode(frame)
                skips.append(sk)
                if m == center:
                    bottom = bot
                    central_padded = frame

            def level_stack(level):
                return torch.stack([sk[level - 1] for sk in skips], dim=1)

        out3, off3, al3 = self.tm3(level_stack(3))
        out2, off2, al2 = self.tm2(level_stack(2), (off3, al3))
        out1, _, _ = self.tm1(level_stack(1), (off2, al2))

        out = self.backbone.decode(bottom, [out1, out2, out3], central_padded)
        out = crop_to(out, size)
        return out.squeeze(0) if squeeze else out

    @torch.no_grad()
    def denoise_window(self, window: torch.Tensor, tile: int | None = None,
                       tile_overlap: int = 16) -> torch.Tensor:
        """Inference on one (T, C, H, W) window; output clamped to [0,1]."""
        if tile is None:
            return self.forward(window).clamp_(0.0, 1.0)
        return self._denoise_tiled(window, tile, tile_overlap)

    @torch.no_grad()
    def denoise_video(self, video: torch.Tensor, tile: int | None = None,
                      tile_overlap: int = 16) -> torch.Tensor:
        """Slide a window over all N frames (temporal reflection at the
        boundaries) and return the N denoised frames."""
        n = video.shape[0]
        out = []
        for t in range(n):
            window = video[window_indices(t, n, self.frames)]
            out.append(self.denoise_window(window, tile=tile, tile_overlap=tile_overlap))
        return torch.stack(out, dim=0)

    def _denoise_tiled(self, window: torch.Tensor, tile: int, overlap: int) -> torch.Tensor:
        _, c, h, w = window.shape
        if tile <= overlap:
            raise ConfigurationError("tile size must exceed the overlap")
        acc = torch.zeros(self.cfg.out_channels, h, w, dtype=window.dtype,
                          device=window.device)
        wsum = torch.zeros(1, h, w, dtype=window.dtype, device=window.device)
        for y0, y1 in _tile_spans(h, tile, overlap):
            for x0, x1 in _tile_spans(w, tile, overlap):
                patch = self.forward(window[:, :, y0:y1, x0:x1])
                wmap = _blend_weights(y1 - y0, x1 - x0, overlap, window.dtype,
                                      y0 > 0, y1 < h, x0 > 0, x1 < w)
                acc[:, y0:y1, x0:x1] += patch * wmap
                wsum[:, y0:y1, x0:x1] += wmap
        return (acc / wsum).clamp_(0.0, 1.0)


def _tile_spans(total: int, tile: int, overlap: int) -> list[tuple[int, int]]:
    if total <= tile:
        return [(0, total)]
    stride = tile - overlap
    starts = list(range(0, total - tile, stride))
    starts.append(total - tile)
    return [(s, s + tile) for s in starts]


def _blend_weights(h, w, overlap, dtype, ramp_top, ramp_bottom, ramp_left, ramp_right):
    """Per-tile blending weights: linear ramps over the overlap on
    interior edges, flat elsewhere."""
    wy = torch.ones(h, dtype=dtype)
    wx = torch.ones(w, dtype=dtype)
    ramp = torch.linspace(1.0 / (overlap + 1), overlap / (overlap + 1), overlap, dtype=dtype)
    if ramp_top:
        wy[:overlap] = ramp
    if ramp_bottom:
        wy[-overlap:] = ramp.flip(0)
    if ramp_left:
        wx[:overlap] = ramp
    if ramp_right:
        wx[-overlap:] = ramp.flip(0)
    return (wy.view(-1, 1) * wx.view(1, -1)).unsqueeze(0)
