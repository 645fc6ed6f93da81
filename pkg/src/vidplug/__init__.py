"""Video denoising with plug-in temporal modules.

A pre-trained encoder-decoder image denoiser is lifted into a video
denoiser by inserting gated deformable-alignment modules at its skip
connections; the modules are then fine-tuned bottom-to-top on pseudo
noisy-clean pairs built by denoise-then-recorrupt, with no clean videos.
"""

from .backbone import DenoiserConfig, ImageDenoiser, build_image_denoiser
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import VideoTensor, load_srgb_video, make_toy_dataset, pack_raw_to_rgbg
from .errors import CheckpointMismatchError, ConfigurationError, DataError, NumericError
from .finetune import FinetuneSchedule, StepSpec, build_schedule, run_progressive, \
    run_schedule
from .metrics import MetricReport, psnr, ssim, temporal_coherence
from .noise import AWGN, NoiseModel, PoissonGaussian, PseudoPairSet, make_pseudo_pairs
from .video import VideoDenoiser, window_indices

__version__ = "0.1.0"

__all__ = [
    "AWGN",
    "Checkpoint",
    "CheckpointMismatchError",
    "ConfigurationError",
    "DataError",
    "DenoiserConfig",
    "FinetuneSchedule",
    "ImageDenoiser",
    "MetricReport",
    "NoiseModel",
    "NumericError",
    "PoissonGaussian",
    "PseudoPairSet",
    "StepSpec",
    "VideoDenoiser",
    "VideoTensor",
    "build_image_denoiser",
    "build_schedule",
    "load_checkpoint",
    "load_srgb_video",
    "make_pseudo_pairs",
    "make_toy_dataset",
    "pack_raw_to_rgbg",
    "psnr",
    "run_progressive",
    "run_schedule",
    "save_checkpoint",
    "ssim",
    "temporal_coherence",
    "window_indices",
]
