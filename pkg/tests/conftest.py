"""Shared test helpers: independent oracles and tiny model builders."""

import math

import pytest
import torch

from vidplug.backbone import DenoiserConfig, build_image_denoiser
from vidplug.video import VideoDenoiser


def brute_force_deform_conv(features, offsets, weight, bias=None):
    """Reference deformable conv: plain Python loops over output
    positions and kernel taps with explicit bilinear sampling and zero
    padding. Deliberately independent of the vectorized implementation.
    """
    c, h, w = features.shape
    c_out, _, kh, kw = weight.shape
    k2 = kh * kw
    groups = offsets.shape[0] // (2 * k2)
    cg = c // groups
    out = torch.zeros(c_out, h, w, dtype=features.dtype)

    def sample(ci, y, x):
        y0, x0 = math.floor(y), math.floor(x)
        total = 0.0
        for yy in (y0, y0 + 1):
            for xx in (x0, x0 + 1):
                if 0 <= yy < h and 0 <= xx < w:
                    total += (1 - abs(y - yy)) * (1 - abs(x - xx)) * float(features[ci, yy, xx])
        return total

    for co in range(c_out):
        for py in range(h):
            for px in range(w):
                acc = float(bias[co]) if bias is not None else 0.0
                for ci in range(c):
                    g = ci // cg
                    for ky in range(kh):
                        for kx in range(kw):
                            k = ky * kw + kx
                            dy = float(offsets[(g * k2 + k) * 2, py, px])
                            dx = float(offsets[(g * k2 + k) * 2 + 1, py, px])
                            acc += float(weight[co, ci, ky, kx]) * sample(
                                ci, py + ky - kh // 2 + dy, px + kx - kw // 2 + dx)
                out[co, py, px] = acc
    return out


def finite_difference_grad(fn, tensor, h=1e-3):
    """Central finite differences of a scalar-valued fn w.r.t. tensor."""
    grad = torch.zeros_like(tensor)
    flat = tensor.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b, eps=1e-12):
    return ((a - b).norm() / max(a.norm().item(), b.norm().item(), eps)).item()


def tiny_desk_config(channels=(4, 8, 8, 16), block_style="plain"):
    return DenoiserConfig.desk(channels=list(channels), enc_blocks=[1, 1, 1, 1],
                               dec_blocks=[1, 1, 1], block_style=block_style)


def tiny_video_denoiser(seed=0, frames=5, channels=(4, 8, 8, 16)):
    backbone = build_image_denoiser(tiny_desk_config(channels), seed=seed)
    torch.manual_seed(seed + 1)
    return VideoDenoiser(backbone, frames=frames)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)
