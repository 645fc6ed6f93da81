"""Noise models: statistical oracles, variance laws, pseudo pairs."""

import numpy as np
import pytest
import torch

from vidplug.errors import ConfigurationError, DataError
from vidplug.noise import AWGN, PoissonGaussian, load_calibration_table, \
    make_pseudo_pairs, noise_model_from_dict, noise_model_to_dict, sample_awgn, \
    sample_poisson_gaussian


def test_awgn_zero_sigma(rng):
    noise = sample_awgn((1000,), 0.0, rng)
    assert torch.equal(noise, torch.zeros(1000))


def test_awgn_std_within_one_percent():
    gen = torch.Generator().manual_seed(42)
    sigma = 30.0 / 255.0
    noise = sample_awgn((1_000_000,), sigma, gen)
    assert abs(noise.std().item() - sigma) / sigma < 0.01
    assert abs(noise.mean().item()) < 3 * sigma / 1000


def test_awgn_reproducible():
    a = sample_awgn((64, 64), 0.1, torch.Generator().manual_seed(7))
    b = sample_awgn((64, 64), 0.1, torch.Generator().manual_seed(7))
    assert torch.equal(a, b)
    with pytest.raises(ConfigurationError):
        sample_awgn((4,), -0.1)


def test_poisson_gaussian_degenerate_cases(rng):
    x = torch.zeros(1000)
    noise = sample_poisson_gaussian(x, alpha=0.01, delta=0.0, generator=rng)
    assert torch.equal(noise, torch.zeros(1000))       # P(0) = 0, no read noise
    pure_read = sample_poisson_gaussian(torch.full((100_000,), 0.5), alpha=0.0,
                                        delta=0.02, generator=rng)
    assert abs(pure_read.std().item() - 0.02) / 0.02 < 0.02


def test_poisson_gaussian_point_variance():
    gen = torch.Generator().manual_seed(17)
    alpha, delta = 0.01, 0.005
    x = torch.full((1_000_000,), 0.5)
    noise = sample_poisson_gaussian(x, alpha, delta, gen)
    expected_var = alpha * 0.5 + delta ** 2
    assert abs(noise.var().item() - expected_var) / expected_var < 0.02
    total_std = expected_var ** 0.5
    assert abs(noise.mean().item()) < 3 * total_std / 1000


def test_poisson_gaussian_variance_regression():
    """Per-intensity variance is affine: slope alpha, intercept delta^2."""
    gen = torch.Generator().manual_seed(23)
    alpha, delta = 0.01, 0.02
    xs = np.arange(0.1, 0.95, 0.1)
    variances = []
    for x in xs:
        noise = sample_poisson_gaussian(torch.full((1_000_000,), float(x)), alpha,
                                        delta, gen)
        variances.append(noise.var().item())
    slope, intercept = np.polyfit(xs, variances, 1)
    assert abs(slope - alpha) / alpha < 0.03
    assert abs(intercept - delta ** 2) / delta ** 2 < 0.05


def test_model_dict_roundtrip():
    for model in (AWGN(0.1), PoissonGaussian(0.01, 0.002)):
        assert noise_model_from_dict(noise_model_to_dict(model)) == model
    with pytest.raises(ConfigurationError):
        noise_model_from_dict({"kind": "speckle"})


def test_make_pseudo_pairs_identity_denoiser(rng):
    video = torch.rand(4, 3, 16, 16)
    pair = make_pseudo_pairs(video, lambda v: v, AWGN(0.0), rng, source_step=1)
    assert torch.equal(pair.clean, video)
    assert torch.equal(pair.noisy, video)
    assert pair.source_step == 1


def test_make_pseudo_pairs_residual_statistics():
    gen = torch.Generator().manual_seed(5)
    sigma = 25.0 / 255.0
    video = torch.rand(8, 3, 128, 128, generator=gen)
    pair = make_pseudo_pairs(video, lambda v: v * 0.5 + 0.25, AWGN(sigma), gen)
    residual = pair.noisy - pair.clean
    assert abs(residual.std().item() - sigma) / sigma < 0.02
    assert pair.clean.min() >= 0.0 and pair.clean.max() <= 1.0


def test_make_pseudo_pairs_shape_mismatch(rng):
    video = torch.rand(4, 3, 16, 16)
    with pytest.raises(DataError):
        make_pseudo_pairs(video, lambda v: v[:, :, :8, :8], AWGN(0.1), rng)


def test_pair_reproducibility():
    video = torch.rand(3, 3, 32, 32, generator=torch.Generator().manual_seed(9))
    pairs = [make_pseudo_pairs(video, lambda v: v, AWGN(0.1),
                               torch.Generator().manual_seed(11)) for _ in range(2)]
    assert torch.equal(pairs[0].noisy, pairs[1].noisy)


def test_calibration_table(tmp_path):
    path = tmp_path / "iso.json"
    path.write_text('{"1600": {"alpha": 0.012, "delta": 0.002},'
                    ' "3200": {"alpha": 0.024, "delta": 0.004}}')
    table = load_calibration_table(path)
    assert table[1600] == PoissonGaussian(0.012, 0.002)
    assert table[3200].alpha == 0.024
    bad = tmp_path / "bad.json"
    bad.write_text('{"1600": {"alpha": 0.01}}')
    with pytest.raises(DataError):
        load_calibration_table(bad)
    with pytest.raises(DataError):
        load_calibration_table(tmp_path / "missing.json")
