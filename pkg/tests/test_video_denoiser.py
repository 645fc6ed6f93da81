"""Composed video denoiser: plugin identity, windows, boundaries, tiling."""

import pytest
import torch

from vidplug.errors import ConfigurationError
from vidplug.video import VideoDenoiser, window_indices, _tile_spans

from conftest import tiny_video_denoiser


def test_window_indices_reflection():
    assert window_indices(0, 12, 5) == [2, 1, 0, 1, 2]
    assert window_indices(11, 12, 5) == [9, 10, 11, 10, 9]
    assert window_indices(5, 12, 5) == [3, 4, 5, 6, 7]
    assert window_indices(0, 1, 5) == [0, 0, 0, 0, 0]
    assert window_indices(0, 2, 5) == [0, 1, 0, 1, 0]
    assert window_indices(1, 3, 3) == [0, 1, 2]


def test_plugin_identity_window_bitwise():
    vd = tiny_video_denoiser(seed=0)
    vd.eval()
    window = torch.rand(5, 3, 40, 40)
    out = vd.denoise_window(window)
    ref = vd.backbone.denoise_image(window[2])
    assert torch.equal(out, ref)


def test_plugin_identity_full_video_bitwise():
    vd = tiny_video_denoiser(seed=1)
    vd.eval()
    video = torch.rand(7, 3, 32, 32)
    out = vd.denoise_video(video)
    ref = torch.stack([vd.backbone.denoise_image(f) for f in video])
    assert torch.equal(out, ref)


def test_single_frame_video():
    vd = tiny_video_denoiser(seed=2)
    vd.eval()
    video = torch.rand(1, 3, 24, 24)
    out = vd.denoise_video(video)
    assert out.shape == video.shape
    assert torch.equal(out[0], vd.backbone.denoise_image(video[0]))


def test_frame_count_mismatch():
    vd = tiny_video_denoiser(seed=3, frames=5)
    with pytest.raises(ConfigurationError):
        vd(torch.rand(3, 3, 16, 16))


def test_identical_frames_any_gate_shape():
    vd = tiny_video_denoiser(seed=4)
    with torch.no_grad():
        for tm in (vd.tm1, vd.tm2, vd.tm3):
            tm.gate.normal_(0, 0.1)
    vd.eval()
    frame = torch.rand(3, 48, 48)
    window = frame.unsqueeze(0).repeat(5, 1, 1, 1)
    out = vd.denoise_window(window)
    assert out.shape == (3, 48, 48)
    assert torch.isfinite(out).all()


def test_training_and_inference_paths_agree():
    """The batched training path must compute the same function as the
    per-frame inference path (up to float reassociation)."""
    vd = tiny_video_denoiser(seed=5)
    with torch.no_grad():
        for tm in (vd.tm1, vd.tm2, vd.tm3):
            tm.gate.normal_(0, 0.2)
            tm.offset_conv2.weight.normal_(0, 0.05)
    window = torch.rand(2, 5, 3, 32, 32)
    vd.train()
    with torch.no_grad():
        out_train = vd(window)
    vd.eval()
    out_eval = vd(window)
    assert torch.allclose(out_train, out_eval, atol=1e-5)


def test_tile_spans_cover():
    spans = _tile_spans(100, 48, 16)
    assert spans[0][0] == 0 and spans[-1][1] == 100
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        assert b0 < a1            # overlapping
    assert _tile_spans(30, 48, 16) == [(0, 30)]


def test_tiled_blending_exact_on_identity():
    """With the residual head zeroed the denoiser is the identity, so a
    tiled pass must reproduce the input exactly (blend weights sum to 1)."""
    vd = tiny_video_denoiser(seed=6)
    with torch.no_grad():
        vd.backbone.ending.weight.zero_()
        vd.backbone.ending.bias.zero_()
    vd.eval()
    window = torch.rand(5, 3, 80, 72)
    out = vd.denoise_window(window, tile=40, tile_overlap=16)
    assert torch.allclose(out, window[2], atol=1e-6)


def test_tiled_close_to_untiled():
    vd = tiny_video_denoiser(seed=7)
    vd.eval()
    window = torch.rand(5, 3, 80, 80)
    full = vd.denoise_window(window)
    tiled = vd.denoise_window(window, tile=48, tile_overlap=16)
    assert (full - tiled).abs().mean().item() < 5e-3


def test_step_index_roundtrip_attr():
    vd = tiny_video_denoiser(seed=8)
    assert vd.step_index == 0
    assert vd.temporal_module(3) is vd.tm3
    assert vd.temporal_module(1) is vd.tm1
