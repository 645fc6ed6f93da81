"""Fine-tuning machinery: freeze soundness, schedules, sampling, resume."""

import math

import pytest
import torch

from vidplug.errors import ConfigurationError, NumericError
from vidplug.finetune import FinetuneSchedule, StepSpec, build_schedule, cosine_lr, \
    finetune_step, run_schedule, sample_batch, select_trainable, step_seed
from vidplug.noise import AWGN, PseudoPairSet

from conftest import tiny_video_denoiser


def _pairs(seed=0, n_videos=2, frames=6, size=24):
    gen = torch.Generator().manual_seed(seed)
    out = []
    for _ in range(n_videos):
        clean = torch.rand(frames, 3, size, size, generator=gen)
        noisy = clean + 0.1 * torch.randn(clean.shape, generator=gen)
        out.append(PseudoPairSet(clean=clean, noisy=noisy, source_step=1, model=AWGN(0.1)))
    return out


def test_cosine_endpoints_exact():
    for total in (2, 10, 1000, 200_000):
        assert abs(cosine_lr(0, total, 1e-3, 1e-5) - 1e-3) / 1e-3 < 1e-12
        assert abs(cosine_lr(total - 1, total, 1e-3, 1e-5) - 1e-5) / 1e-5 < 1e-12
    assert cosine_lr(0, 1, 1e-3, 1e-5) == 1e-3
    mid = cosine_lr(5, 11, 1e-3, 1e-5)
    assert mid == pytest.approx((1e-3 + 1e-5) / 2)
    assert cosine_lr(3, 10, 1e-3, 1e-5) > cosine_lr(4, 10, 1e-3, 1e-5)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        FinetuneSchedule(steps=[StepSpec(2, 10), StepSpec(3, 10), StepSpec(1, 10)],
                         mode="progressive")
    with pytest.raises(ConfigurationError):
        FinetuneSchedule(steps=[], mode="progressive")
    with pytest.raises(ConfigurationError):
        StepSpec(3, 10, lr_start=1e-5, lr_end=1e-3)
    with pytest.raises(ConfigurationError):
        FinetuneSchedule(steps=[StepSpec(None, 10)] * 3, mode="bogus")
    sched = build_schedule("repeat_twice", iterations=5)
    assert [s.target_level for s in sched.steps] == [3, 2, 1, 3, 2, 1]
    joint = build_schedule("joint_modules", iterations=5)
    assert all(s.target_level is None for s in joint.steps)


def test_select_trainable_modes():
    vd = tiny_video_denoiser(seed=0)
    params = select_trainable(vd, "progressive", 3)
    names = {n for n, p in vd.named_parameters() if p.requires_grad}
    assert names == {n for n, _ in vd.named_parameters() if n.startswith("tm3.")}
    assert len(params) == len(names)

    select_trainable(vd, "joint_modules", None)
    names = {n for n, p in vd.named_parameters() if p.requires_grad}
    assert names == {n for n, _ in vd.named_parameters() if n.startswith("tm")}

    select_trainable(vd, "all_params", None)
    assert all(p.requires_grad for p in vd.parameters())


def test_sample_batch_alignment(rng):
    frames, size = 5, 16
    coords = torch.arange(frames * 3 * size * size, dtype=torch.float32)
    clean = coords.reshape(frames, 3, size, size) / coords.numel()
    pair = PseudoPairSet(clean=clean, noisy=clean + 1.0, source_step=1, model=AWGN(0.1))
    inputs, targets = sample_batch([pair], rng, patch=8, frames=3, batch=2)
    assert inputs.shape == (2, 3, 3, 8, 8)
    assert targets.shape == (2, 3, 8, 8)
    for b in range(2):
        # locate the target crop inside the clean video by its first value
        flat_idx = int((clean == targets[b, 0, 0, 0]).nonzero()[0, 0])
        t = flat_idx
        y = int((clean[t] == targets[b, 0, 0, 0]).nonzero()[0, 1])
        x = int((clean[t] == targets[b, 0, 0, 0]).nonzero()[0, 2])
        assert torch.equal(targets[b], clean[t, :, y:y + 8, x:x + 8])
        assert torch.equal(inputs[b, 1], clean[t, :, y:y + 8, x:x + 8] + 1.0)


def test_sample_batch_patch_equals_frame(rng):
    pair = _pairs(n_videos=1, size=16)[0]
    inputs, targets = sample_batch([pair], rng, patch=16, frames=3, batch=1)
    found = any(torch.equal(targets[0], pair.clean[t]) for t in range(pair.clean.shape[0]))
    assert found


def test_sample_batch_pads_small_videos(rng):
    pair = _pairs(n_videos=1, size=12)[0]
    inputs, targets = sample_batch([pair], rng, patch=16, frames=3, batch=2)
    assert inputs.shape[-2:] == (16, 16)


def test_sample_batch_reproducible():
    pairs = _pairs()
    a = sample_batch(pairs, torch.Generator().manual_seed(3), 8, 3, 4)
    b = sample_batch(pairs, torch.Generator().manual_seed(3), 8, 3, 4)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_finetune_step_zero_iterations():
    vd = tiny_video_denoiser(seed=1)
    before = {k: v.clone() for k, v in vd.state_dict().items()}
    curve = finetune_step(vd, _pairs(frames=5), StepSpec(3, 0, patch=16, batch=1),
                          generator=torch.Generator().manual_seed(0))
    assert curve == []
    assert vd.step_index == 1
    for k, v in vd.state_dict().items():
        assert torch.equal(before[k], v)


def test_finetune_step_freeze_soundness():
    vd = tiny_video_denoiser(seed=2, frames=3)
    before = {k: v.clone() for k, v in vd.state_dict().items()}
    finetune_step(vd, _pairs(frames=4), StepSpec(3, 5, patch=16, batch=2),
                  generator=torch.Generator().manual_seed(1))
    changed = {k for k, v in vd.state_dict().items() if not torch.equal(before[k], v)}
    assert changed                       # something trained
    assert all(k.startswith("tm3.") for k in changed)


def test_finetune_step_batch_order_invariance():
    """Per-sample L1 terms don't depend on batch companions."""
    vd = tiny_video_denoiser(seed=3, frames=3)
    vd.train()
    gen = torch.Generator().manual_seed(5)
    inputs, targets = sample_batch(_pairs(frames=4), gen, 16, 3, 4)
    with torch.no_grad():
        pred = vd(inputs)
        losses = (pred - targets).abs().mean(dim=(1, 2, 3))
        perm = torch.tensor([2, 0, 3, 1])
        pred_p = vd(inputs[perm])
        losses_p = (pred_p - targets[perm]).abs().mean(dim=(1, 2, 3))
    assert torch.allclose(losses[perm], losses_p, atol=1e-6)
    assert torch.allclose(losses.mean(), losses_p.mean(), atol=1e-6)


def test_finetune_step_nan_restores_snapshot():
    vd = tiny_video_denoiser(seed=4, frames=3)
    pairs = _pairs(frames=4)
    pairs[0].clean[0, 0, 0, 0] = float("nan")
    before = {k: v.clone() for k, v in vd.state_dict().items()}
    with pytest.raises(NumericError):
        finetune_step(vd, pairs, StepSpec(3, 50, patch=16, batch=4),
                      generator=torch.Generator().manual_seed(2))
    for k, v in vd.state_dict().items():
        assert torch.equal(before[k], v)
    assert vd.step_index == 0


def test_run_schedule_progressive_and_resume():
    torch.manual_seed(0)
    videos = [torch.rand(4, 3, 24, 24) for _ in range(2)]
    sched = FinetuneSchedule(steps=[StepSpec(3, 3, patch=16, batch=2),
                                    StepSpec(2, 3, patch=16, batch=2),
                                    StepSpec(1, 3, patch=16, batch=2)],
                             mode="progressive")

    vd_full = tiny_video_denoiser(seed=5, frames=3)
    saved = {}
    run_schedule(vd_full, videos, AWGN(0.05), sched, seed=42,
                 save_step=lambda k, m: saved.update({k: {n: t.clone() for n, t in
                                                          m.state_dict().items()}}))
    assert vd_full.step_index == 3
    assert set(saved) == {1, 2, 3}

    # kill-and-resume: rebuild at step 1 and replay steps 2..3
    vd_resume = tiny_video_denoiser(seed=5, frames=3)
    vd_resume.load_state_dict(saved[1])
    vd_resume.step_index = 1
    run_schedule(vd_resume, videos, AWGN(0.05), sched, seed=42, start_step=2)
    for k, v in vd_full.state_dict().items():
        assert torch.equal(v, vd_resume.state_dict()[k]), k


def test_run_schedule_rejects_wrong_start():
    vd = tiny_video_denoiser(seed=6, frames=3)
    vd.step_index = 2
    sched = build_schedule("progressive", iterations=1, patch=16, batch=1)
    with pytest.raises(ConfigurationError):
        run_schedule(vd, [torch.rand(3, 3, 16, 16)], AWGN(0.05), sched, seed=0)


def test_resample_pairs_redraws_noise():
    from vidplug.finetune import resample_pairs

    pairs = _pairs(n_videos=1)
    redrawn = resample_pairs(pairs, torch.Generator().manual_seed(5))
    assert torch.equal(redrawn[0].clean, pairs[0].clean)
    assert not torch.equal(redrawn[0].noisy, pairs[0].noisy)
    residual = redrawn[0].noisy - redrawn[0].clean
    assert abs(residual.std().item() - 0.1) / 0.1 < 0.05


def test_step_seed_stable():
    assert step_seed(0, 1) == step_seed(0, 1)
    assert step_seed(0, 1) != step_seed(0, 2)
    assert step_seed(1, 1) != step_seed(2, 1)


def test_joint_mode_trains_all_gates():
    vd = tiny_video_denoiser(seed=7, frames=3)
    videos = [torch.rand(4, 3, 24, 24, generator=torch.Generator().manual_seed(8))]
    sched = FinetuneSchedule(steps=[StepSpec(None, 4, patch=16, batch=2)] * 3,
                             mode="joint_modules")
    run_schedule(vd, videos, AWGN(0.05), sched, seed=1)
    assert vd.step_index == 3
    for tm in (vd.tm1, vd.tm2, vd.tm3):
        assert tm.gate.grad is None or True   # gates trained in-place
        assert tm.gate.abs().sum() > 0


def test_all_params_mode_touches_backbone():
    vd = tiny_video_denoiser(seed=8, frames=3)
    before = {k: v.clone() for k, v in vd.backbone.state_dict().items()}
    videos = [torch.rand(4, 3, 24, 24, generator=torch.Generator().manual_seed(9))]
    sched = build_schedule("all_params", iterations=3, patch=16, batch=2)
    run_schedule(vd, videos, AWGN(0.05), sched, seed=2)
    changed = [k for k, v in vd.backbone.state_dict().items()
               if not torch.equal(before[k], v)]
    assert changed


def test_fewer_trainable_than_total_each_step():
    vd = tiny_video_denoiser(seed=9)
    total_tm = sum(p.numel() for n, p in vd.named_parameters() if n.startswith("tm"))
    for level in (3, 2, 1):
        live = select_trainable(vd, "progressive", level)
        assert 0 < sum(p.numel() for p in live) < total_tm
