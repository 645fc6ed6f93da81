"""Gated temporal-alignment modules built on deformable convolution.

One module sits at each encoder-decoder skip connection (levels 1-3).
It learns per-pixel sampling offsets from the concatenated central and
neighbor features, refines them with offsets transferred from the level
below (coarse to fine), warps each neighbor with a deformable conv,
fuses the aligned frames, and adds the result to the central features
through a per-channel gate that starts at zero. With the gate at zero
the module is an exact no-op, so an untrained video denoiser reproduces
its image-denoiser host bit for bit.

The deformable conv is implemented directly with differentiable bilinear
gathering (v1, no modulation mask): out-of-image samples read as zero,
and autograd supplies exact gradients w.r.t. features, offsets, and
kernel weights.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError


def deform_conv(features: torch.Tensor, offsets: torch.Tensor, weight: torch.Tensor,
                bias: torch.Tensor | None = None) -> torch.Tensor:
    """Deformable convolution with 'same' zero padding.

    features: (B, C, H, W)
    offsets:  (B, 2*K*K*G, H, W) ordered per group, per kernel tap, (dy, dx)
    weight:   (C_out, C, KH, KW), odd kernel dims
    Deformable groups G partition the input channels; group g's offsets
    displace the taps of channels [g*C/G, (g+1)*C/G).
    """
    B, C, H, W = features.shape
    C_out, C_in, KH, KW = weight.shape
    if C_in != C:
        raise ConfigurationError(f"weight expects {C_in} input channels, features have {C}")
    if KH % 2 == 0 or KW % 2 == 0:
        raise ConfigurationError("kernel dims must be odd")
    K2 = KH * KW
    if offsets.shape[0] != B or offsets.shape[-2:] != (H, W) or offsets.shape[1] % (2 * K2) != 0:
        raise ConfigurationError(
            f"offset field {tuple(offsets.shape)} incompatible with features "
            f"{tuple(features.shape)} and {KH}x{KW} kernel"
        )
    groups = offsets.shape[1] // (2 * K2)
    if C % groups != 0:
        raise ConfigurationError(f"{groups} deformable groups do not divide {C} channels")
    cg = C // groups
    dt, dev = features.dtype, features.device

    off = offsets.view(B, groups, K2, 2, H, W)
    base_y = (torch.arange(KH, device=dev, dtype=dt) - KH // 2).repeat_interleave(KW)
    base_x = (torch.arange(KW, device=dev, dtype=dt) - KW // 2).repeat(KH)
    ys = torch.arange(H, device=dev, dtype=dt).view(1, 1, 1, H, 1)
    xs = torch.arange(W, device=dev, dtype=dt).view(1, 1, 1, 1, W)
    py = ys + base_y.view(1, 1, K2, 1, 1) + off[:, :, :, 0]   # (B, G, K2, H, W)
    px = xs + base_x.view(1, 1, K2, 1, 1) + off[:, :, :, 1]

    y0 = py.floor()
    x0 = px.floor()
    wy1 = py - y0
    wx1 = px - x0
    wy0 = 1.0 - wy1
    wx0 = 1.0 - wx1

    # all four bilinear corners gathered at once; out-of-image corners
    # weigh zero, which realizes the zero-padding boundary
    iy = torch.stack([y0, y0, y0 + 1, y0 + 1], dim=2)        # (B, G, 4, K2, H, W)
    ix = torch.stack([x0, x0 + 1, x0, x0 + 1], dim=2)
    wgt = torch.stack([wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1], dim=2)
    inside = ((iy >= 0) & (iy < H) & (ix >= 0) & (ix < W)).to(dt)
    wgt = wgt * inside

    idx = (iy.clamp(0, H - 1) * W + ix.clamp(0, W - 1)).long()
    idx = idx.view(B, groups, 1, 4 * K2 * H * W).expand(B, groups, cg, 4 * K2 * H * W)
    feat = features.reshape(B, groups, cg, H * W)
    vals = feat.gather(3, idx).view(B, groups, cg, 4, K2, H, W)
    sampled = (vals * wgt.unsqueeze(2)).sum(dim=3)

    cols = sampled.reshape(B, C * K2, H * W)
    out = torch.matmul(weight.view(C_out, C * K2), cols).view(B, C_out, H, W)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv2d(nn.Module):
    """Module wrapper around :func:`deform_conv` with conv-style init."""

    def __init__(self, in_channels, out_channels, kernel_size=3, deform_groups=1, bias=True):
        super().__init__()
        if in_channels % deform_groups != 0:
            raise ConfigurationError("deform_groups must divide in_channels")
        self.kernel_size = kernel_size
        self.deform_groups = deform_groups
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.empty(out_channels)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        if self.bias is not None:
            fan_in = in_channels * kernel_size * kernel_size
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, features, offsets):
        return deform_conv(features, offsets, self.weight, self.bias)


def upsample_offsets(offsets: torch.Tensor) -> torch.Tensor:
    """2x bilinear upsampling of an offset field, with values doubled:
    offsets are pixel coordinates and must rescale across pyramid levels."""
    return F.interpolate(offsets, scale_factor=2, mode="bilinear", align_corners=False) * 2.0


def upsample_features(features: torch.Tensor) -> torch.Tensor:
    """2x bilinear upsampling of a feature map (values untouched)."""
    return F.interpolate(features, scale_factor=2, mode="bilinear", align_corners=False)


def default_deform_groups(channels: int, profile: str) -> int:
    """8 groups in the full profile; min(8, C/4) at desk scale, reduced
    to the nearest divisor of the channel count."""
    g = 8 if profile == "full" else min(8, max(1, channels // 4))
    while channels % g:
        g -= 1
    return g


class TemporalModule(nn.Module):
    """Alignment module for one pyramid level.

    ``transfer_channels`` / ``transfer_offset_channels`` describe the
    fields handed up from the level below; the bottom module passes None
    for both and runs without the transferred branches.

    ``max_offset`` clips learned offsets in the forward pass: a float is
    a fixed pixel bound, None clips to half the level's spatial extent.
    """

    def __init__(self, channels: int, frames: int, transfer_channels: int | None = None,
                 transfer_offset_channels: int | None = None, kernel_size: int = 3,
                 deform_groups: int = 1, max_offset: float | None = None):
        super().__init__()
        if frames % 2 != 1:
            raise ConfigurationError("frame count must be odd")
        if (transfer_channels is None) != (transfer_offset_channels is None):
            raise ConfigurationError("transfer feature/offset channels must be given together")
        self.channels = channels
        self.frames = frames
        self.kernel_size = kernel_size
        self.deform_groups = deform_groups
        self.max_offset = max_offset
        self.has_transfer = transfer_channels is not None
        self.offset_channels = 2 * kernel_size * kernel_size * deform_groups

        self.offset_conv1 = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.offset_conv2 = nn.Conv2d(channels, self.offset_channels, 3, padding=1)
        # zero init: offsets start at zero so the DCN begins as a plain conv
        nn.init.zeros_(self.offset_conv2.weight)
        nn.init.zeros_(self.offset_conv2.bias)

        refine_in = self.offset_channels + (transfer_offset_channels or 0)
        self.offset_refine = nn.Conv2d(refine_in, self.offset_channels, 3, padding=1)
        nn.init.zeros_(self.offset_refine.bias)

        self.dcn = DeformConv2d(channels, channels, kernel_size, deform_groups=deform_groups)

        fuse_in = channels + (transfer_channels or 0)
        self.feat_refine = nn.Conv2d(fuse_in, channels, 3, padding=1)
        self.frame_fuse = nn.Conv2d(frames * channels, channels, 1)
        self.gate = nn.Parameter(torch.zeros(channels))

    def learn_offsets(self, central: torch.Tensor, neighbor: torch.Tensor) -> torch.Tensor:
        """Raw offsets from the stacked central/neighbor features."""
        if central.shape != neighbor.shape:
            raise ConfigurationError(
                f"central {tuple(central.shape)} and neighbor {tuple(neighbor.shape)} differ"
            )
        x = torch.cat([central, neighbor], dim=1)
        x = F.leaky_relu(self.offset_conv1(x), negative_slope=0.1)
        return self.offset_conv2(x)

    def _clip(self, offsets: torch.Tensor) -> torch.Tensor:
        if self.max_offset is not None:
            return offsets.clamp(-self.max_offset, self.max_offset)
        b, _, h, w = offsets.shape
        k2 = self.kernel_size * self.kernel_size
        view = offsets.view(b, self.deform_groups, k2, 2, h, w)
        dy = view[:, :, :, 0].clamp(-h / 2, h / 2)
        dx = view[:, :, :, 1].clamp(-w / 2, w / 2)
        return torch.stack([dy, dx], dim=3).view_as(offsets)

    def refine_offsets(self, raw: torch.Tensor,
                       transferred: torch.Tensor | None = None) -> torch.Tensor:
        """Final offsets: refine raw ones together with the 2x-upsampled,
        value-doubled field transferred from the level below (if any)."""
        if self.has_transfer != (transferred is not None):
            raise ConfigurationError("transferred offsets do not match module wiring")
        if transferred is not None:
            raw = torch.cat([raw, upsample_offsets(transferred)], dim=1)
        return self._clip(self.offset_refine(raw))

    def align(self, neighbor: torch.Tensor, offsets: torch.Tensor,
              transferred_feat: torch.Tensor | None = None) -> torch.Tensor:
        """Warp a neighbor's features and fuse with the transferred map."""
        if self.has_transfer != (transferred_feat is not None):
            raise ConfigurationError("transferred features do not match module wiring")
        out = self.dcn(neighbor, offsets)
        if transferred_feat is not None:
            out = torch.cat([out, upsample_features(transferred_feat)], dim=1)
        return self.feat_refine(out)

    def fuse_frames(self, aligned) -> torch.Tensor:
        """Fuse the T aligned maps (temporal order) into one.

        Accepts a sequence of T (B, C, H, W) maps or a (B, T, C, H, W)
        tensor (channel concatenation and the flattened view coincide).
        """
        if torch.is_tensor(aligned):
            if aligned.dim() != 5 or aligned.shape[1] != self.frames:
                raise ConfigurationError(
                    f"expected {self.frames} aligned maps, got {tuple(aligned.shape)}")
            stacked = aligned.reshape(aligned.shape[0], -1, *aligned.shape[-2:])
        else:
            if len(aligned) != self.frames:
                raise ConfigurationError(
                    f"expected {self.frames} aligned maps, got {len(aligned)}")
            stacked = torch.cat(list(aligned), dim=1)
        return self.frame_fuse(stacked)

    def gated_residual(self, central: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
        return central + self.gate.view(1, -1, 1, 1) * fused

    def forward(self, feats: torch.Tensor, transferred=None):
        """Run the module on per-frame features.

        feats: (B, T, C, H, W) in temporal order.
        transferred: None at the bottom level, else (offsets, aligned)
        (B, T, ·, H/2, W/2) tensors from the level below.
        Returns (gated output, per-frame refined offsets, per-frame
        aligned maps) with the latter two feeding the level above.

        The offset/align convs are shared across neighbors, so the T
        frames fold into the batch dimension.
        """
        if feats.dim() != 5 or feats.shape[1] != self.frames:
            raise ConfigurationError(
                f"expected (B, {self.frames}, C, H, W) features, got {tuple(feats.shape)}"
            )
        if self.has_transfer != (transferred is not None):
            raise ConfigurationError("transferred inputs do not match module wiring")
        b, t, c, h, w = feats.shape
        central = feats[:, t // 2]
        flat = feats.reshape(b * t, c, h, w)
        central_rep = central.unsqueeze(1).expand_as(feats).reshape(b * t, c, h, w)
        raw = self.learn_offsets(central_rep, flat)
        t_off = t_feat = None
        if transferred is not None:
            t_off = transferred[0].reshape(b * t, -1, h // 2, w // 2)
            t_feat = transferred[1].reshape(b * t, -1, h // 2, w // 2)
        offs = self.refine_offsets(raw, t_off)
        aligned = self.align(flat, offs, t_feat)
        aligned = aligned.view(b, t, c, h, w)
        fused = self.fuse_frames(aligned)
        return (self.gated_residual(central, fused),
                offs.view(b, t, self.offset_channels, h, w), aligned)
