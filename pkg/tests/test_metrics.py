"""Quality metrics against closed forms and reference implementations."""

import math

import pytest
import torch
from skimage.metrics import structural_similarity as sk_ssim

from vidplug.metrics import MetricReport, emit_report, emit_step_curve, psnr, ssim, \
    temporal_coherence


def test_psnr_identical_caps():
    x = torch.rand(3, 16, 16)
    assert psnr(x, x) == 100.0


def test_psnr_constant_difference():
    a = torch.zeros(3, 32, 32, dtype=torch.float64)
    b = torch.full((3, 32, 32), 0.1, dtype=torch.float64)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)   # MSE 0.01 at peak 1


def test_psnr_mse_one_at_peak_255():
    a = torch.zeros(1, 64, 64)
    b = torch.ones(1, 64, 64)                            # MSE 1 in 255-scale units
    assert psnr(a, b, peak=255.0) == pytest.approx(20.0 * math.log10(255.0), abs=1e-9)
    assert psnr(a, b, peak=255.0) == pytest.approx(48.1308, abs=1e-3)


def test_psnr_scale_antisymmetry(rng):
    a = torch.rand(3, 24, 24, generator=rng, dtype=torch.float64)
    b = torch.rand(3, 24, 24, generator=rng, dtype=torch.float64)
    assert abs(psnr(a, b, peak=1.0) - psnr(255 * a, 255 * b, peak=255.0)) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(torch.rand(3, 8, 8), torch.rand(3, 8, 9))


def test_ssim_identical():
    x = torch.rand(3, 32, 32)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negative_image_low(rng):
    base = torch.rand(1, 48, 48, generator=rng) * 0.6 + 0.2
    value = ssim(base, 1.0 - base)
    assert value < 0.5
    reference = sk_ssim(base[0].numpy(), (1.0 - base)[0].numpy(), data_range=1.0,
                        gaussian_weights=True, sigma=1.5, win_size=11,
                        use_sample_covariance=False)
    assert value == pytest.approx(reference, abs=1e-4)


def test_ssim_matches_reference_on_noisy_pair(rng):
    a = torch.rand(1, 40, 40, generator=rng)
    b = (a + 0.1 * torch.randn(1, 40, 40, generator=rng)).clamp(0, 1)
    mine = ssim(a, b)
    reference = sk_ssim(a[0].numpy(), b[0].numpy(), data_range=1.0,
                        gaussian_weights=True, sigma=1.5, win_size=11,
                        use_sample_covariance=False)
    assert mine == pytest.approx(reference, abs=1e-4)


def test_ssim_constant_images_closed_form():
    c = 0.25
    a = torch.full((1, 24, 24), c)
    b = torch.full((1, 24, 24), c + 0.5)
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    # zero variances: luminance term only, contrast term = c2/c2 = 1
    expected = (2 * c * (c + 0.5) + c1) / (c * c + (c + 0.5) ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_symmetry(rng):
    a = torch.rand(3, 20, 20, generator=rng)
    b = torch.rand(3, 20, 20, generator=rng)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_window_too_small():
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))


def test_temporal_coherence_basics():
    video = torch.full((5, 3, 16, 16), 0.5)
    assert temporal_coherence(video) == 0.0
    stepped = torch.stack([torch.full((3, 8, 8), 0.01 * k) for k in range(4)])
    assert temporal_coherence(stepped) == pytest.approx(0.01, abs=1e-9)
    with pytest.raises(ValueError):
        temporal_coherence(torch.rand(1, 3, 8, 8))


def test_temporal_coherence_awgn_law():
    """Static video + i.i.d. AWGN: E|n - n'| = 2 sigma / sqrt(pi)."""
    gen = torch.Generator().manual_seed(99)
    sigma = 30.0 / 255.0
    video = 0.5 + sigma * torch.randn(5, 3, 512, 512, generator=gen)
    expected = 2.0 * sigma / math.sqrt(math.pi)
    assert abs(temporal_coherence(video) - expected) / expected < 0.02


def test_emit_report(tmp_path):
    reports = [MetricReport("v0", [30.0, 31.0, 32.0], [0.9, 0.91, 0.92])]
    out = tmp_path / "report.csv"
    emit_report(reports, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "video,frame,psnr,ssim"
    assert len(lines) == 1 + 3 + 1 + 1            # header, frames, video mean, summary
    assert lines[-1].startswith("summary,mean,31.000000")
    emit_report(reports, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "none.csv")


def test_emit_step_curve(tmp_path):
    emit_step_curve([(0, 30.0), (1, 31.0), (2, 31.5), (3, 31.8)], tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().strip().splitlines()
    assert lines[0] == "step,mean_psnr"
    assert len(lines) == 5
