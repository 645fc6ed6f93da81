"""Restoration metrics and report emission.

PSNR is capped at 100 dB (identical inputs) and floored at 0. SSIM uses
the standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03);
multi-channel inputs are converted to grayscale by channel mean first.
Temporal coherence is the mean absolute difference of adjacent frames,
a flicker measure for static scenes.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped to [0, 100] dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, max(0.0, 10.0 * math.log10(peak * peak / mse)))


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    g = g / g.sum()
    return (g.view(-1, 1) * g.view(1, -1)).view(1, 1, size, size)


def _to_gray(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x
    if x.dim() == 3:
        return x.mean(dim=0)
    raise ValueError(f"expected (H, W) or (C, H, W) image, got {tuple(x.shape)}")


def ssim(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    """Windowed SSIM on the grayscale (channel-mean) images."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = _to_gray(a).double().unsqueeze(0).unsqueeze(0)
    y = _to_gray(b).double().unsqueeze(0).unsqueeze(0)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA, torch.float64)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    var_x = F.conv2d(x * x, win) - mu_x * mu_x
    var_y = F.conv2d(y * y, win) - mu_y * mu_y
    cov = F.conv2d(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return (num / den).mean().item()


def temporal_coherence(video: torch.Tensor) -> float:
    """Mean absolute error between adjacent frames of an (N,C,H,W) video."""
    frames = video if isinstance(video, torch.Tensor) else video.frames
    if frames.shape[0] < 2:
        raise ValueError("temporal coherence needs at least 2 frames")
    return torch.mean(torch.abs(frames[1:].double() - frames[:-1].double())).item()


@dataclass
class MetricReport:
    """Per-frame and per-video quality summary for one video."""

    video_id: str
    frame_psnr: list = field(default_factory=list)
    frame_ssim: list = field(default_factory=list)
    tc: float | None = None
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def mean_psnr(self) -> float:
        return sum(self.frame_psnr) / len(self.frame_psnr)

    @property
    def mean_ssim(self) -> float:
        return sum(self.frame_ssim) / len(self.frame_ssim)


def evaluate_video(pred: torch.Tensor, gt: torch.Tensor, video_id: str = "video",
                   with_tc: bool = False, config: dict | None = None) -> MetricReport:
    """PSNR/SSIM per frame (optionally temporal coherence of pred)."""
    t0 = time.perf_counter()
    report = MetricReport(video_id=video_id, config=config or {})
    for p_frame, g_frame in zip(pred, gt):
        report.frame_psnr.append(psnr(p_frame, g_frame))
        report.frame_ssim.append(ssim(p_frame, g_frame))
    if with_tc:
        report.tc = temporal_coherence(pred)
    report.wall_clock = time.perf_counter() - t0
    return report


def emit_report(reports, path) -> None:
    """Write per-frame rows plus a summary row per video and overall."""
    if not reports:
        raise ValueError("no reports to emit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "frame", "psnr", "ssim"])
        for rep in reports:
            for i, (p, s) in enumerate(zip(rep.frame_psnr, rep.frame_ssim)):
                writer.writerow([rep.video_id, i, f"{p:.6f}", f"{s:.6f}"])
            writer.writerow([rep.video_id, "mean", f"{rep.mean_psnr:.6f}", f"{rep.mean_ssim:.6f}"])
        all_p = [p for rep in reports for p in rep.frame_psnr]
        all_s = [s for rep in reports for s in rep.frame_ssim]
        writer.writerow(["summary", "mean", f"{sum(all_p) / len(all_p):.6f}",
                         f"{sum(all_s) / len(all_s):.6f}"])


def emit_step_curve(rows, path) -> None:
    """Write a (step, mean PSNR) curve suitable for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_psnr"])
        for step, value in rows:
            writer.writerow([step, f"{value:.6f}"])
