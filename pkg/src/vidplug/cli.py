"""Batch command-line interface.

Subcommands cover the whole pipeline: ``make-toy`` synthesizes toy
clips, ``pretrain-image`` trains the desk-scale image denoiser,
``make-pairs`` builds pseudo noisy-clean pairs, ``finetune`` runs the
progressive (or ablation) fine-tuning, ``denoise`` applies a checkpoint,
``eval`` scores outputs against ground truth.

Every command resolves its configuration from built-in defaults, an
optional YAML config file, then explicit flags (highest precedence),
rejects unknown config keys, logs the resolved config, and writes it
next to its outputs. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as vdata
from . import finetune as ft
from . import metrics as vmetrics
from . import pretrain as vpretrain
from .backbone import DenoiserConfig, build_image_denoiser
from .checkpoint import check_config_match, load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataError, NumericError
from .noise import AWGN, PoissonGaussian, load_calibration_table, make_pseudo_pairs, \
    noise_model_to_dict

logger = logging.getLogger("vidplug")

DEFAULT_SIGMA = 30.0 / 255.0


# ---------------------------------------------------------------------------
# config plumbing

def _resolve(defaults: dict, required: tuple, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a key-value mapping")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    missing = [k for k in required if cfg.get(k) is None]
    if missing:
        raise ConfigurationError(f"missing required settings: {', '.join(missing)}")
    return cfg


def _log_config(cfg: dict, out_dir=None) -> None:
    blob = json.dumps(cfg, indent=2, sort_keys=True, default=str)
    logger.info("resolved config:\n%s", blob)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(blob)


def _apply_determinism(cfg: dict) -> None:
    torch.manual_seed(int(cfg.get("seed", 0)))
    if cfg.get("deterministic"):
        torch.use_deterministic_algorithms(True)


def _noise_model(cfg: dict):
    kind = cfg.get("noise", "awgn")
    if kind == "awgn":
        return AWGN(sigma=float(cfg.get("sigma", DEFAULT_SIGMA)))
    if kind == "poisson_gaussian":
        if cfg.get("calibration") and cfg.get("iso"):
            table = load_calibration_table(cfg["calibration"])
            iso = int(cfg["iso"])
            if iso not in table:
                raise ConfigurationError(f"ISO {iso} not in calibration table")
            return table[iso]
        if cfg.get("alpha") is None or cfg.get("delta") is None:
            raise ConfigurationError(
                "poisson_gaussian noise needs --alpha/--delta or --calibration/--iso"
            )
        return PoissonGaussian(alpha=float(cfg["alpha"]), delta=float(cfg["delta"]))
    raise ConfigurationError(f"unknown noise kind {kind!r}")


def _default_frames(cfg: dict, noise_model) -> int:
    if cfg.get("frames"):
        return int(cfg["frames"])
    return 3 if isinstance(noise_model, PoissonGaussian) else 5


def _backbone_config(cfg: dict) -> DenoiserConfig:
    profile = cfg.get("profile", "desk")
    kwargs = {}
    for key in ("channels", "enc_blocks", "dec_blocks"):
        if cfg.get(key):
            val = cfg[key]
            kwargs[key] = [int(x) for x in val.split(",")] if isinstance(val, str) else val
    if profile == "full":
        if kwargs:
            raise ConfigurationError("full profile has fixed channels/blocks")
        return DenoiserConfig.full(in_channels=int(cfg.get("in_channels", 3)),
                                   out_channels=int(cfg.get("out_channels", 3)))
    if cfg.get("block_style"):
        kwargs["block_style"] = cfg["block_style"]
    return DenoiserConfig.desk(in_channels=int(cfg.get("in_channels", 3)),
                               out_channels=int(cfg.get("out_channels", 3)), **kwargs)


def _load_videos(root) -> list[tuple[str, vdata.VideoTensor]]:
    return [(vid, vdata.load_video_auto(path)) for vid, path in vdata.discover_videos(root)]


# ---------------------------------------------------------------------------
# commands

MAKE_TOY_DEFAULTS = dict(out=None, kind="translating", size=64, frames=12, count=3,
                         sigma=DEFAULT_SIGMA, shift=1.0, subpixel=False,
                         texture_style="smooth", seed=0)


def cmd_make_toy(cfg: dict) -> None:
    _log_config(cfg, cfg["out"])
    gen = torch.Generator().manual_seed(int(cfg["seed"]))
    out = Path(cfg["out"])
    shift = 0.5 if cfg["subpixel"] else float(cfg["shift"])
    for k in range(int(cfg["count"])):
        clean, noisy = vdata.make_toy_dataset(cfg["kind"], size=int(cfg["size"]),
                                              num_frames=int(cfg["frames"]),
                                              sigma=float(cfg["sigma"]), generator=gen,
                                              shift_per_frame=shift,
                                              texture_style=cfg["texture_style"])
        vdata.save_srgb_video(clean, out / "clean" / f"video{k}")
        vdata.save_srgb_video(noisy, out / "noisy" / f"video{k}")
    logger.info("wrote %d %s clips to %s", int(cfg["count"]), cfg["kind"], out)


PRETRAIN_DEFAULTS = dict(out=None, data=None, textures=24, size=96, iterations=2000,
                         batch=8, patch=48, lr_start=1e-3, lr_end=1e-5,
                         sigma_min=10 / 255, sigma_max=55 / 255, val_sigma=DEFAULT_SIGMA,
                         val_count=4, seed=0, profile="desk", block_style=None,
                         channels=None, enc_blocks=None, dec_blocks=None,
                         in_channels=3, out_channels=3, resume=None,
                         deterministic=False, log_every=200)


def cmd_pretrain_image(cfg: dict) -> None:
    _log_config(cfg, cfg["out"])
    _apply_determinism(cfg)
    out = Path(cfg["out"])
    bcfg = _backbone_config(cfg)
    seed = int(cfg["seed"])

    if cfg.get("data"):
        corpus = vdata.load_image_corpus(cfg["data"])
    else:
        gen = torch.Generator().manual_seed(seed + 1)
        corpus = [vdata.random_texture(int(cfg["size"]), gen)
                  for _ in range(int(cfg["textures"]))]
    val_gen = torch.Generator().manual_seed(seed + 2)
    val_images = [vdata.random_texture(int(cfg["size"]), val_gen)
                  for _ in range(int(cfg["val_count"]))]

    start_iteration = 0
    model = build_image_denoiser(bcfg, seed=seed)
    if cfg.get("resume"):
        ckpt = load_checkpoint(cfg["resume"])
        check_config_match(bcfg, ckpt.config)
        model = ckpt.build_image_denoiser()
        for p in model.parameters():
            p.requires_grad_(True)
        start_iteration = int(ckpt.extra.get("iterations_done", 0))
        logger.info("resuming at iteration %d", start_iteration)

    curve = vpretrain.pretrain_image_denoiser(
        model, corpus, iterations=int(cfg["iterations"]), batch=int(cfg["batch"]),
        patch=int(cfg["patch"]), lr_start=float(cfg["lr_start"]), lr_end=float(cfg["lr_end"]),
        sigma_range=(float(cfg["sigma_min"]), float(cfg["sigma_max"])),
        generator=torch.Generator().manual_seed(seed + 3),
        start_iteration=start_iteration, log_every=int(cfg["log_every"]))

    denoised_db, noisy_db = vpretrain.validate_image_denoiser(
        model, val_images, float(cfg["val_sigma"]))
    logger.info("validation at sigma %.4f: noisy %.2f dB -> denoised %.2f dB",
                float(cfg["val_sigma"]), noisy_db, denoised_db)

    for p in model.parameters():        # the spatial prior ships frozen
        p.requires_grad_(False)
    extra = {"iterations_done": int(cfg["iterations"]),
             "sigma_range": [float(cfg["sigma_min"]), float(cfg["sigma_max"])],
             "val_psnr": denoised_db, "val_noisy_psnr": noisy_db, "seed": seed}
    save_checkpoint(out / "step0.ckpt", model, step_index=0, extra=extra)
    ft.write_training_curve(curve, out / "pretrain_curve.csv")
    logger.info("wrote %s", out / "step0.ckpt")


PAIRS_DEFAULTS = dict(ckpt=None, data=None, out=None, noise="awgn", sigma=DEFAULT_SIGMA,
                      alpha=None, delta=None, iso=None, calibration=None, frames=None,
                      seed=0, deterministic=False)


def cmd_make_pairs(cfg: dict) -> None:
    _log_config(cfg, cfg["out"])
    _apply_determinism(cfg)
    model_noise = _noise_model(cfg)
    ckpt = load_checkpoint(cfg["ckpt"])
    denoiser = ckpt.build_video_denoiser(frames=_default_frames(cfg, model_noise))
    denoiser.eval()
    source_step = min(ckpt.step_index + 1, 3)
    gen = torch.Generator().manual_seed(int(cfg["seed"]))
    out = Path(cfg["out"])

    entries = []
    for vid, video in _load_videos(cfg["data"]):
        if video.frames.shape[1] != denoiser.cfg.in_channels:
            raise ConfigurationError(
                f"video {vid} has {video.frames.shape[1]} channels, checkpoint "
                f"expects {denoiser.cfg.in_channels}"
            )
        pair = make_pseudo_pairs(video.frames, denoiser.denoise_video, model_noise,
                                 gen, source_step=source_step)
        for name, tensor in (("clean", pair.clean), ("noisy", pair.noisy)):
            vdir = out / name / vid
            vdir.mkdir(parents=True, exist_ok=True)
            for i, frame in enumerate(tensor.numpy()):
                np.save(vdir / f"{i:05d}.npy", frame)
        entries.append({"video_id": vid, "num_frames": int(pair.clean.shape[0]),
                        "colorspace": video.colorspace})
        logger.info("wrote pseudo pair for %s (%d frames)", vid, pair.clean.shape[0])

    manifest = {"source_step": source_step, "checkpoint": str(cfg["ckpt"]),
                "noise": noise_model_to_dict(model_noise), "seed": int(cfg["seed"]),
                "clean_clamped": True, "noisy_clamped": False, "videos": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


FINETUNE_DEFAULTS = dict(ckpt=None, data=None, out=None, mode="progressive",
                         iterations=2000, lr_start=1e-3, lr_end=1e-5, batch=4,
                         patch=None, frames=None, noise="awgn", sigma=DEFAULT_SIGMA,
                         alpha=None, delta=None, iso=None, calibration=None,
                         val_data=None, val_gt=None, seed=0, deterministic=False,
                         resample_every=0, log_every=200)


def cmd_finetune(cfg: dict) -> None:
    _log_config(cfg, cfg["out"])
    _apply_determinism(cfg)
    model_noise = _noise_model(cfg)
    ckpt = load_checkpoint(cfg["ckpt"])
    model = ckpt.build_video_denoiser(frames=_default_frames(cfg, model_noise))
    out = Path(cfg["out"])
    seed = int(cfg["seed"])

    videos = [video.frames for _, video in _load_videos(cfg["data"])]
    for v in videos:
        if v.shape[1] != model.cfg.in_channels:
            raise ConfigurationError("video channel count does not match checkpoint")

    patch = cfg.get("patch")
    if patch is None:
        patch = 160 if model.cfg.profile == "full" else 32
    schedule = ft.build_schedule(cfg["mode"], iterations=int(cfg["iterations"]),
                                 lr_start=float(cfg["lr_start"]), lr_end=float(cfg["lr_end"]),
                                 batch=int(cfg["batch"]), patch=int(patch))
    start_step = int(ckpt.extra.get("completed_steps", 0)) + 1
    if start_step > len(schedule.steps):
        raise ConfigurationError("checkpoint already completed this schedule")

    validate = None
    step_curve = []
    if cfg.get("val_data") and cfg.get("val_gt"):
        val_noisy = [v.frames for _, v in _load_videos(cfg["val_data"])]
        val_clean = [v.frames for _, v in _load_videos(cfg["val_gt"])]

        def validate(m):
            scores = [vmetrics.psnr(m.denoise_video(n), c)
                      for n, c in zip(val_noisy, val_clean)]
            return sum(scores) / len(scores)

        model.eval()
        step_curve.append((model.step_index, validate(model)))
        logger.info("step %d validation PSNR %.3f dB", model.step_index, step_curve[-1][1])

    def save_step(k, m):
        save_checkpoint(out / f"step{k}.ckpt", m, noise_model=model_noise,
                        extra={"completed_steps": k, "mode": cfg["mode"], "seed": seed})

    history = ft.run_schedule(model, videos, model_noise, schedule, seed=seed,
                              save_step=save_step, validate=validate,
                              log_every=int(cfg["log_every"]), start_step=start_step,
                              resample_every=int(cfg["resample_every"]))
    for k, entry in history.items():
        ft.write_training_curve(entry["curve"], out / f"step{k}_curve.csv")
        if entry["psnr"] is not None:
            step_curve.append((k, entry["psnr"]))
    if step_curve:
        vmetrics.emit_step_curve(step_curve, out / "step_psnr.csv")


DENOISE_DEFAULTS = dict(ckpt=None, data=None, out=None, gt=None, frames=None,
                        tile=None, overlap=16, noise="awgn", sigma=DEFAULT_SIGMA,
                        alpha=None, delta=None, iso=None, calibration=None,
                        seed=0, deterministic=False)


def cmd_denoise(cfg: dict) -> None:
    _log_config(cfg, cfg["out"])
    _apply_determinism(cfg)
    ckpt = load_checkpoint(cfg["ckpt"])
    model = ckpt.build_video_denoiser(frames=_default_frames(cfg, ckpt.noise_model))
    model.eval()
    out = Path(cfg["out"])
    tile = int(cfg["tile"]) if cfg.get("tile") else None

    reports = []
    gt_videos = dict(_load_videos(cfg["gt"])) if cfg.get("gt") else {}
    for vid, video in _load_videos(cfg["data"]):
        if video.frames.shape[1] != model.cfg.in_channels:
            raise ConfigurationError(
                f"video {vid} has {video.frames.shape[1]} channels, checkpoint "
                f"expects {model.cfg.in_channels}"
            )
        t0 = time.perf_counter()
        denoised = model.denoise_video(video.frames, tile=tile,
                                       tile_overlap=int(cfg["overlap"]))
        elapsed = time.perf_counter() - t0
        if video.colorspace == "raw_rgbg":
            vdir = out / vid
            vdir.mkdir(parents=True, exist_ok=True)
            meta = video.meta
            bayer = torch.stack([vdata.unpack_rgbg_to_raw(
                f, meta["cfa"], meta["black_level"], meta["white_level"])
                for f in denoised])
            vdata.save_raw_video(bayer, vdir, meta["cfa"], meta["black_level"],
                                 meta["white_level"], meta.get("iso"))
        else:
            vdata.save_srgb_video(denoised, out / vid)
        logger.info("denoised %s (%d frames, %.1fs)", vid, denoised.shape[0], elapsed)
        if vid in gt_videos:
            rep = vmetrics.evaluate_video(denoised, gt_videos[vid].frames, video_id=vid,
                                          with_tc=True, config={"ckpt": str(cfg["ckpt"])})
            rep.wall_clock = elapsed
            reports.append(rep)
    if reports:
        vmetrics.emit_report(reports, out / "report.csv")
        mean = sum(r.mean_psnr for r in reports) / len(reports)
        logger.info("mean PSNR %.3f dB over %d videos", mean, len(reports))


EVAL_DEFAULTS = dict(pred=None, gt=None, out=None, tc=False)


def cmd_eval(cfg: dict) -> None:
    _log_config(cfg)
    preds = dict(_load_videos(cfg["pred"]))
    gts = dict(_load_videos(cfg["gt"]))
    shared = sorted(set(preds) & set(gts))
    if not shared:
        raise DataError("prediction and ground-truth roots share no video ids")
    reports = []
    for vid in shared:
        reports.append(vmetrics.evaluate_video(preds[vid].frames, gts[vid].frames,
                                               video_id=vid, with_tc=bool(cfg["tc"])))
        if reports[-1].tc is not None:
            logger.info("%s: %.3f dB / SSIM %.4f / TC %.5f", vid,
                        reports[-1].mean_psnr, reports[-1].mean_ssim, reports[-1].tc)
        else:
            logger.info("%s: %.3f dB / SSIM %.4f", vid, reports[-1].mean_psnr,
                        reports[-1].mean_ssim)
    vmetrics.emit_report(reports, cfg["out"])
    if cfg["tc"]:
        tc_path = Path(cfg["out"]).with_suffix(".tc.csv")
        with open(tc_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["video", "temporal_coherence"])
            for rep in reports:
                writer.writerow([rep.video_id, f"{rep.tc:.8f}"])
        logger.info("wrote %s", tc_path)
    logger.info("wrote %s", cfg["out"])


# ---------------------------------------------------------------------------
# parser

def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="YAML config file (flags override it)")
    sp.add_argument("--log-level", default="INFO", dest="log_level")


def _add_noise_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--noise", choices=["awgn", "poisson_gaussian"])
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--iso", type=int)
    sp.add_argument("--calibration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidplug",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("make-toy", help="synthesize toy clean/noisy clips")
    _add_common(sp)
    sp.add_argument("--out", required=False)
    sp.add_argument("--kind", choices=["static12", "translating"])
    sp.add_argument("--size", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--count", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--shift", type=float)
    sp.add_argument("--subpixel", action=argparse.BooleanOptionalAction)
    sp.add_argument("--texture-style", choices=["smooth", "pattern"], dest="texture_style")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_make_toy, defaults=MAKE_TOY_DEFAULTS, required_keys=("out",))

    sp = sub.add_parser("pretrain-image", help="train the desk image denoiser")
    _add_common(sp)
    sp.add_argument("--out")
    sp.add_argument("--data", help="clean image corpus; omit to use generated textures")
    sp.add_argument("--textures", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--patch", type=int)
    sp.add_argument("--lr-start", type=float, dest="lr_start")
    sp.add_argument("--lr-end", type=float, dest="lr_end")
    sp.add_argument("--sigma-min", type=float, dest="sigma_min")
    sp.add_argument("--sigma-max", type=float, dest="sigma_max")
    sp.add_argument("--val-sigma", type=float, dest="val_sigma")
    sp.add_argument("--val-count", type=int, dest="val_count")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--profile", choices=["desk", "full"])
    sp.add_argument("--block-style", choices=["plain", "nafnet"], dest="block_style")
    sp.add_argument("--channels", help="comma-separated desk channel widths")
    sp.add_argument("--enc-blocks", dest="enc_blocks")
    sp.add_argument("--dec-blocks", dest="dec_blocks")
    sp.add_argument("--in-channels", type=int, dest="in_channels")
    sp.add_argument("--out-channels", type=int, dest="out_channels")
    sp.add_argument("--resume", help="continue from an earlier step0.ckpt")
    sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction)
    sp.add_argument("--log-every", type=int, dest="log_every")
    sp.set_defaults(func=cmd_pretrain_image, defaults=PRETRAIN_DEFAULTS,
                    required_keys=("out",))

    sp = sub.add_parser("make-pairs", help="build pseudo noisy-clean pairs")
    _add_common(sp)
    sp.add_argument("--ckpt")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--frames", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction)
    _add_noise_flags(sp)
    sp.set_defaults(func=cmd_make_pairs, defaults=PAIRS_DEFAULTS,
                    required_keys=("ckpt", "data", "out"))

    sp = sub.add_parser("finetune", help="progressively fine-tune temporal modules")
    _add_common(sp)
    sp.add_argument("--ckpt")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--mode", choices=list(ft.MODES))
    sp.add_argument("--iterations", type=int, help="iterations per step")
    sp.add_argument("--lr-start", type=float, dest="lr_start")
    sp.add_argument("--lr-end", type=float, dest="lr_end")
    sp.add_argument("--batch", type=int)
    sp.add_argument("--patch", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--val-data", dest="val_data")
    sp.add_argument("--val-gt", dest="val_gt")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction)
    sp.add_argument("--resample-every", type=int, dest="resample_every",
                    help="redraw the recorruption noise every N iterations "
                         "(0 = one fixed realization per step)")
    sp.add_argument("--log-every", type=int, dest="log_every")
    _add_noise_flags(sp)
    sp.set_defaults(func=cmd_finetune, defaults=FINETUNE_DEFAULTS,
                    required_keys=("ckpt", "data", "out"))

    sp = sub.add_parser("denoise", help="denoise videos with a checkpoint")
    _add_common(sp)
    sp.add_argument("--ckpt")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--gt", help="ground-truth root; enables the metric report")
    sp.add_argument("--frames", type=int)
    sp.add_argument("--tile", type=int)
    sp.add_argument("--overlap", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--deterministic", action=argparse.BooleanOptionalAction)
    _add_noise_flags(sp)
    sp.set_defaults(func=cmd_denoise, defaults=DENOISE_DEFAULTS,
                    required_keys=("ckpt", "data", "out"))

    sp = sub.add_parser("eval", help="score denoised videos against ground truth")
    _add_common(sp)
    sp.add_argument("--pred")
    sp.add_argument("--gt")
    sp.add_argument("--out")
    sp.add_argument("--tc", action=argparse.BooleanOptionalAction,
                    help="also report temporal coherence")
    sp.set_defaults(func=cmd_eval, defaults=EVAL_DEFAULTS,
                    required_keys=("pred", "gt", "out"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args.defaults, args.required_keys, args)
        args.func(cfg)
    except ConfigurationError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except (DataError, ValueError, OSError) as exc:
        logger.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
