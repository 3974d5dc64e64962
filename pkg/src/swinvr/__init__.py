"""Toy-scale video restoration with 3D shifted-window multimodal diffusion transformers."""

from .attention import MMAttention, PairCounter, full_mm_attention, window_mm_attention
from .diffusion import add_noise, condition_noise, fm_loss, sample_euler
from .metrics import attention_pair_count, psnr, ssim
from .mmdit import ModelConfig, SwinMMDiT, dit_forward
from .rope3d import RopeParams, rope_rotate
from .vae import CausalVideoVAE, VAEConfig
from .window_layout import Volume3, WindowLayout, WindowSpec, pack_windows, partition, unpack_windows

__version__ = "0.1.0"

__all__ = [
    "CausalVideoVAE",
    "MMAttention",
    "ModelConfig",
    "PairCounter",
    "RopeParams",
    "SwinMMDiT",
    "VAEConfig",
    "Volume3",
    "WindowLayout",
    "WindowSpec",
    "add_noise",
    "attention_pair_count",
    "condition_noise",
    "dit_forward",
    "fm_loss",
    "full_mm_attention",
    "pack_windows",
    "partition",
    "psnr",
    "rope_rotate",
    "sample_euler",
    "ssim",
    "unpack_windows",
    "window_mm_attention",
]
