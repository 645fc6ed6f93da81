"""Dataset ingestion and synthesis.

Videos live on disk as directories of numbered frames:
``<root>/<video_id>/<%05d>.png``. sRGB frames are 8-bit PNG; raw Bayer
frames are 16-bit single-channel PNG with a ``meta.json`` sidecar
carrying the CFA pattern, black/white levels, and ISO. Raw frames are
packed to half-resolution 4-channel RGBG for all processing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, DataError
from .noise import AWGN, NoiseModel, noise_model_to_dict

# channel order R, G1, B, G2 <- (dy, dx) inside the 2x2 CFA tile
CFA_LAYOUTS = {
    "rggb": [(0, 0), (0, 1), (1, 1), (1, 0)],
    "bggr": [(1, 1), (0, 1), (0, 0), (1, 0)],
    "grbg": [(0, 1), (0, 0), (1, 0), (1, 1)],
    "gbrg": [(1, 0), (0, 0), (0, 1), (1, 1)],
}


@dataclass
class VideoTensor:
    """A frame sequence: (N, C, H, W) float tensor plus bookkeeping.

    Ingested data lies in [0,1]; synthesized noisy videos may exceed the
    range by design (recorruption is not clamped).
    """

    frames: torch.Tensor
    colorspace: str = "srgb"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.dim() != 4 or self.frames.shape[0] < 1:
            raise DataError(f"expected (N, C, H, W) frames, got {tuple(self.frames.shape)}")
        c = self.frames.shape[1]
        if self.colorspace == "srgb" and c != 3:
            raise DataError(f"srgb video must have 3 channels, got {c}")
        if self.colorspace == "raw_rgbg" and c != 4:
            raise DataError(f"raw_rgbg video must have 4 channels, got {c}")
        if self.colorspace not in ("srgb", "raw_rgbg"):
            raise DataError(f"unknown colorspace {self.colorspace!r}")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class DatasetManifest:
    """Index of a dataset root: ordered frame paths per video."""

    entries: list
    split: str = "train"

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"split": self.split, "entries": self.entries},
                                         indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        d = json.loads(Path(path).read_text())
        return cls(entries=d["entries"], split=d.get("split", "train"))


def build_manifest(root, split="train", noise: dict | None = None) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    entries = []
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = sorted(str(p) for p in vdir.glob("*.png"))
        if frames:
            entries.append({"video_id": vdir.name, "frames": frames, "noise": noise})
    if not entries:
        raise DataError(f"no videos found under {root}")
    return DatasetManifest(entries=entries, split=split)


def load_srgb_video(directory) -> VideoTensor:
    """Read a directory of numbered 8-bit PNG frames, scaled to [0,1]."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"no frames in {directory}")
    frames = []
    shape = None
    for p in paths:
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(f"frame {p} has shape {arr.shape}, expected {shape}")
        frames.append(torch.from_numpy(arr).permute(2, 0, 1))
    return VideoTensor(frames=torch.stack(frames), colorspace="srgb",
                       meta={"source": str(directory)})


def save_srgb_video(video, directory) -> None:
    """Write frames as 8-bit PNGs (values clamped and quantized)."""
    frames = video.frames if isinstance(video, VideoTensor) else video
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = (frames.clamp(0, 1) * 255.0).round().to(torch.uint8).cpu().numpy()
    for i, frame in enumerate(arr):
        Image.fromarray(np.transpose(frame, (1, 2, 0))).save(directory / f"{i:05d}.png")


def pack_raw_to_rgbg(bayer, pattern: str = "rggb", black_level: float = 0.0,
                     white_level: float = 65535.0) -> torch.Tensor:
    """Pack a (2H, 2W) or (1, 2H, 2W) Bayer mosaic into a normalized
    (4, H, W) RGBG tensor, channels ordered R, G1, B, G2."""
    if pattern not in CFA_LAYOUTS:
        raise DataError(f"unknown CFA pattern {pattern!r}")
    if white_level <= black_level:
        raise DataError("white_level must exceed black_level")
    if isinstance(bayer, np.ndarray):
        bayer = torch.from_numpy(np.ascontiguousarray(bayer))
    if bayer.dim() == 3:
        if bayer.shape[0] != 1:
            raise DataError("bayer mosaic must be single-channel")
        bayer = bayer[0]
    if bayer.shape[-2] % 2 or bayer.shape[-1] % 2:
        raise DataError(f"bayer dims must be even, got {tuple(bayer.shape)}")
    bayer = bayer.to(torch.float32)
    planes = [bayer[dy::2, dx::2] for dy, dx in CFA_LAYOUTS[pattern]]
    packed = torch.stack(planes, dim=0)
    return ((packed - black_level) / (white_level - black_level)).clamp(0.0, 1.0)


def unpack_rgbg_to_raw(rgbg: torch.Tensor, pattern: str = "rggb", black_level: float = 0.0,
                       white_level: float = 65535.0) -> torch.Tensor:
    """Inverse of pack_raw_to_rgbg: back to a (2H, 2W) mosaic in raw DN,
    rounded to integers (exact for in-range integer inputs)."""
    if pattern not in CFA_LAYOUTS:
        raise DataError(f"unknown CFA pattern {pattern!r}")
    if rgbg.dim() != 3 or rgbg.shape[0] != 4:
        raise DataError(f"expected (4, H, W) RGBG, got {tuple(rgbg.shape)}")
    h, w = rgbg.shape[-2:]
    bayer = torch.empty(2 * h, 2 * w, dtype=torch.float32)
    dn = rgbg.to(torch.float32) * (white_level - black_level) + black_level
    for plane, (dy, dx) in zip(dn, CFA_LAYOUTS[pattern]):
        bayer[dy::2, dx::2] = plane
    return bayer.round()


def load_raw_video(directory) -> VideoTensor:
    """Read 16-bit Bayer PNG frames plus meta.json sidecar and pack to RGBG."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"raw video requires a meta.json sidecar in {directory}")
    meta = json.loads(meta_path.read_text())
    for key in ("cfa", "black_level", "white_level"):
        if key not in meta:
            raise DataError(f"meta.json missing required key {key!r}")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"no frames in {directory}")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p)).astype(np.float32)
        frames.append(pack_raw_to_rgbg(torch.from_numpy(arr), meta["cfa"],
                                       meta["black_level"], meta["white_level"]))
    out_meta = {"source": str(directory), **{k: meta[k] for k in meta}}
    return VideoTensor(frames=torch.stack(frames), colorspace="raw_rgbg", meta=out_meta)


def save_raw_video(bayer_frames, directory, cfa: str, black_level: int,
                   white_level: int, iso: int | None = None) -> None:
    """Write (N, 2H, 2W) integer mosaics as 16-bit PNGs with sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"cfa": cfa, "black_level": black_level, "white_level": white_level}
    if iso is not None:
        meta["iso"] = iso
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    arr = bayer_frames.cpu().numpy() if isinstance(bayer_frames, torch.Tensor) else bayer_frames
    for i, frame in enumerate(arr.astype(np.uint16)):
        Image.fromarray(frame).save(directory / f"{i:05d}.png")


def load_image(path) -> torch.Tensor:
    """One 8-bit image file as a (3, H, W) tensor in [0,1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def load_image_corpus(root) -> list[torch.Tensor]:
    """All PNG images under a directory (recursively), for pretraining."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"image corpus not found: {root}")
    paths = sorted(root.rglob("*.png"))
    if not paths:
        raise DataError(f"no images in corpus {root}")
    return [load_image(p) for p in paths]


def is_raw_video_dir(directory) -> bool:
    return (Path(directory) / "meta.json").exists()


def load_video_auto(directory) -> VideoTensor:
    """Load a video directory as raw (meta.json present) or sRGB."""
    if is_raw_video_dir(directory):
        return load_raw_video(directory)
    return load_srgb_video(directory)


def discover_videos(root) -> list[tuple[str, Path]]:
    """(video_id, path) pairs under a dataset root; a directory that
    itself holds frames counts as a single video."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if list(root.glob("*.png")):
        return [(root.name, root)]
    found = [(p.name, p) for p in sorted(root.iterdir())
             if p.is_dir() and list(p.glob("*.png"))]
    if not found:
        raise DataError(f"no videos found under {root}")
    return found


def synthesize_noisy(clean: VideoTensor, model: NoiseModel,
                     generator: torch.Generator | None = None) -> VideoTensor:
    """Corrupt a clean video with a sample from the noise model."""
    noisy = clean.frames + model.sample(clean.frames, generator)
    meta = dict(clean.meta)
    meta["noise"] = noise_model_to_dict(model)
    return VideoTensor(frames=noisy, colorspace=clean.colorspace, meta=meta)


def random_texture(size: int, generator: torch.Generator | None = None,
                   channels: int = 3) -> torch.Tensor:
    """Smooth random texture in [0.05, 0.95]: band-limited noise built
    from bicubically upsampled coarse grids plus a medium-scale layer."""
    coarse = torch.rand((1, channels, max(2, size // 8), max(2, size // 8)), generator=generator)
    mid = torch.rand((1, channels, max(2, size // 4), max(2, size // 4)), generator=generator)
    tex = F.interpolate(coarse, size=(size, size), mode="bicubic", align_corners=False)
    tex = tex + 0.35 * F.interpolate(mid, size=(size, size), mode="bicubic", align_corners=False)
    tex = tex[0]
    lo, hi = tex.min(), tex.max()
    tex = (tex - lo) / (hi - lo + 1e-8)
    return 0.05 + 0.9 * tex


def pattern_texture(size: int, generator: torch.Generator | None = None,
                    channels: int = 3) -> torch.Tensor:
    """High-contrast structured texture: smooth base plus oriented
    gratings and rectangles. Edge-rich content that spatial denoisers
    over-smooth, so temporal information has headroom to restore it."""
    tex = random_texture(size, generator, channels)
    ys, xs = torch.meshgrid(torch.arange(size, dtype=torch.float32),
                            torch.arange(size, dtype=torch.float32), indexing="ij")
    for _ in range(3):
        theta = float(torch.rand((), generator=generator)) * 3.14159
        period = 4.0 + 12.0 * float(torch.rand((), generator=generator))
        phase = float(torch.rand((), generator=generator)) * 6.28318
        amp = 0.15 + 0.2 * float(torch.rand((), generator=generator))
        wave = torch.sin((xs * torch.cos(torch.tensor(theta))
                          + ys * torch.sin(torch.tensor(theta)))
                         * (6.28318 / period) + phase)
        tex = tex + amp * torch.sign(wave) * torch.rand((channels, 1, 1),
                                                        generator=generator)
    for _ in range(4):
        y0, x0 = (int(torch.randint(0, size - 8, (1,), generator=generator))
                  for _ in range(2))
        hgt = int(torch.randint(6, size // 2, (1,), generator=generator))
        wdt = int(torch.randint(6, size // 2, (1,), generator=generator))
        level = torch.rand((channels, 1, 1), generator=generator)
        tex[:, y0:y0 + hgt, x0:x0 + wdt] = 0.25 * tex[:, y0:y0 + hgt, x0:x0 + wdt] \
            + 0.75 * level
    lo, hi = tex.min(), tex.max()
    return 0.05 + 0.9 * (tex - lo) / (hi - lo + 1e-8)


def _shift_frame(frame: torch.Tensor, shift: float) -> torch.Tensor:
    """Horizontal wrap-around shift; linear blend for sub-pixel amounts."""
    whole = int(np.floor(shift))
    frac = shift - whole
    rolled = torch.roll(frame, shifts=whole, dims=-1)
    if frac == 0.0:
        return rolled
    return (1.0 - frac) * rolled + frac * torch.roll(frame, shifts=whole + 1, dims=-1)


def make_toy_dataset(kind: str, size: int = 64, num_frames: int = 12,
                     sigma: float = 30.0 / 255.0,
                     generator: torch.Generator | None = None,
                     shift_per_frame: float = 1.0,
                     texture_style: str = "smooth") -> tuple[VideoTensor, VideoTensor]:
    """Synthesize a (clean, noisy) toy clip.

    ``static12``: one texture repeated for 12 frames (num_frames is
    forced to 12) with i.i.d. AWGN per frame — the flicker benchmark.
    ``translating``: the texture slides shift_per_frame pixels per frame
    (fractional values give sub-pixel motion).
    ``texture_style``: "smooth" band-limited blobs or "pattern" with
    gratings and rectangles.
    """
    if kind not in ("static12", "translating"):
        raise ConfigurationError(f"unknown toy dataset kind {kind!r}")
    if texture_style not in ("smooth", "pattern"):
        raise ConfigurationError(f"unknown texture style {texture_style!r}")
    if kind == "static12":
        num_frames = 12
    make_tex = pattern_texture if texture_style == "pattern" else random_texture
    tex = make_tex(size, generator)
    if kind == "static12":
        clean = tex.unsqueeze(0).repeat(num_frames, 1, 1, 1)
    else:
        clean = torch.stack([_shift_frame(tex, k * shift_per_frame)
                             for k in range(num_frames)], dim=0)
    clean_vt = VideoTensor(frames=clean, colorspace="srgb",
                           meta={"kind": kind, "sigma": sigma, "texture": texture_style})
    noisy_vt = synthesize_noisy(clean_vt, AWGN(sigma), generator)
    return clean_vt, noisy_vt
