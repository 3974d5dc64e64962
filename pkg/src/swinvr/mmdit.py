"""Swin-MMDiT transformer blocks and the velocity-predicting DiT.

Block ``i`` uses the regular window partition when ``i`` is even and the
half-shifted partition when odd. Video and text streams keep separate
modulation, MLP and attention projections. Gates start at zero so every
block is the identity at initialisation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from . import tensorio
from .attention import MMAttention, PairCounter, window_mm_attention
from .errors import ConfigError, DimensionError, DomainError
from .rope3d import RopeParams
from .tensor_core import gelu_tanh, layer_norm, silu
from .window_layout import Volume3, WindowLayout, WindowSpec, partition_regular, partition_shifted


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    The toy default (depth 4, width 64, window 2x4x4 latent tokens) stands in
    for a 5x64x64 window at production scale; patch (1, 1, 1) keeps window
    sizes in latent-token units.
    """

    depth: int = 4
    dim: int = 64
    heads: int = 4
    window: tuple[int, int, int] = (2, 4, 4)
    latent_channels: int = 16
    patch: tuple[int, int, int] = (1, 1, 1)
    text_dim: int = 64
    mlp_ratio: int = 4
    freq_dim: int = 64
    rope_base: float = 10000.0
    use_rope: bool = True

    def __post_init__(self):
        self.window = tuple(self.window)
        self.patch = tuple(self.patch)
        if self.depth < 2 or self.depth % 2:
            raise ConfigError(f"depth must be even and >= 2, got {self.depth}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.freq_dim % 2:
            raise ConfigError(f"freq_dim must be even, got {self.freq_dim}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(*self.window)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def timestep_embedding(
    t, dim: int, max_period: float = 10000.0, scale: float = 1000.0, dtype=torch.float32
) -> torch.Tensor:
    """Sinusoidal features ``[cos(scale*t*f_i), sin(scale*t*f_i)]``, ``f_i = max_period**(-i/half)``.

    ``t`` may be a float or a 1-D tensor; the result has shape ``(dim,)`` or ``(B, dim)``.
    """
    if dim % 2:
        raise ConfigError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    tt = torch.as_tensor(t, dtype=torch.float64)
    args = scale * tt[..., None] * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1).to(dtype)


class Modulation(nn.Module):
    """adaLN: conditioning vector -> shift/scale/gate for attention and MLP sub-layers."""

    def __init__(self, dim: int):
        super().__init__()
        self.lin = nn.Linear(dim, 6 * dim)
        nn.init.zeros_(self.lin.weight)
        nn.init.zeros_(self.lin.bias)

    def forward(self, cond: torch.Tensor):
        return self.lin(silu(cond)).unsqueeze(1).chunk(6, dim=-1)


class MLP(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, ratio * dim)
        self.fc2 = nn.Linear(ratio * dim, dim)

    def forward(self, x):
        return self.fc2(gelu_tanh(self.fc1(x)))


def _modulate(x, shift, scale):
    return layer_norm(x) * (1 + scale) + shift


class SwinMMDiTBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, index: int):
        super().__init__()
        self.index = index
        self.shifted = index % 2 == 1
        self.window = cfg.window_spec.with_shift(self.shifted)
        self.rope = RopeParams(cfg.head_dim, base=cfg.rope_base) if cfg.use_rope else None
        self.attn = MMAttention(cfg.dim, cfg.heads)
        self.video_mod = Modulation(cfg.dim)
        self.text_mod = Modulation(cfg.dim)
        self.video_mlp = MLP(cfg.dim, cfg.mlp_ratio)
        self.text_mlp = MLP(cfg.dim, cfg.mlp_ratio)
        self.last_layout: WindowLayout | None = None

    def layout(self, volume: Volume3) -> WindowLayout:
        fn = partition_shifted if self.shifted else partition_regular
        return fn(volume, self.window)

    def forward(self, video, text, cond, volume: Volume3, counter: PairCounter | None = None):
        layout = self.layout(volume)
        self.last_layout = layout
        v_sh1, v_sc1, v_g1, v_sh2, v_sc2, v_g2 = self.video_mod(cond)
        t_sh1, t_sc1, t_g1, t_sh2, t_sc2, t_g2 = self.text_mod(cond)

        va, ta = window_mm_attention(
            _modulate(video, v_sh1, v_sc1), _modulate(text, t_sh1, t_sc1), layout, self.attn, self.rope, counter
        )
        video = video + v_g1 * va
        text = text + t_g1 * ta
        video = video + v_g2 * self.video_mlp(_modulate(video, v_sh2, v_sc2))
        text = text + t_g2 * self.text_mlp(_modulate(text, t_sh2, t_sc2))
        return video, text


def block_forward(video, text, cond, block: SwinMMDiTBlock, volume, counter=None):
    """Functional wrapper: run ``block`` on ``(B, N, d)`` video and ``(B, L, d)`` text."""
    return block(video, text, cond, Volume3(*volume), counter)


class SwinMMDiT(nn.Module):
    """Maps (noisy latent, LQ latent, text, t) to a velocity of the noisy latent's shape."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.latent_channels
        pt, ph, pw = cfg.patch
        self.patch_numel = pt * ph * pw
        self.embed = nn.Linear(2 * c * self.patch_numel, cfg.dim)
        self.text_embed = nn.Linear(cfg.text_dim, cfg.dim)
        self.time_mlp = nn.Sequential(nn.Linear(cfg.freq_dim, cfg.dim), nn.SiLU(), nn.Linear(cfg.dim, cfg.dim))
        self.pooled_text = nn.Linear(cfg.text_dim, cfg.dim)
        self.blocks = nn.ModuleList([SwinMMDiTBlock(cfg, i) for i in range(cfg.depth)])
        self.head = nn.Linear(cfg.dim, c * self.patch_numel)

    # latent (B, T, H, W, C) <-> tokens (B, T'H'W', p*C)
    def patchify(self, x: torch.Tensor) -> tuple[torch.Tensor, Volume3]:
        b, t, h, w, c = x.shape
        pt, ph, pw = self.cfg.patch
        if t % pt or h % ph or w % pw:
            raise DimensionError(f"latent {(t, h, w)} not divisible by patch {self.cfg.patch}")
        vol = Volume3(t // pt, h // ph, w // pw)
        x = x.view(b, vol.T, pt, vol.H, ph, vol.W, pw, c).permute(0, 1, 3, 5, 2, 4, 6, 7)
        return x.reshape(b, vol.numel, pt * ph * pw * c), vol

    def unpatchify(self, tokens: torch.Tensor, vol: Volume3) -> torch.Tensor:
        b = tokens.shape[0]
        pt, ph, pw = self.cfg.patch
        c = self.cfg.latent_channels
        x = tokens.view(b, vol.T, vol.H, vol.W, pt, ph, pw, c).permute(0, 1, 4, 2, 5, 3, 6, 7)
        return x.reshape(b, vol.T * pt, vol.H * ph, vol.W * pw, c)

    def condition(self, text: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(timestep_embedding(t, self.cfg.freq_dim, dtype=text.dtype))
        return temb + self.pooled_text(text.mean(dim=1))

    def forward(self, noisy, lq, text, t, counter: PairCounter | None = None):
        single = noisy.dim() == 4
        if single:
            noisy, lq, text = noisy[None], lq[None], text[None] if text.dim() == 2 else text
        if noisy.shape != lq.shape:
            raise DimensionError(f"noisy latent {tuple(noisy.shape)} and LQ latent {tuple(lq.shape)} differ")
        if noisy.dim() != 5 or noisy.shape[-1] != self.cfg.latent_channels:
            raise DimensionError(f"latent must be (T, H, W, {self.cfg.latent_channels}), got {tuple(noisy.shape)}")
        b = noisy.shape[0]
        t = torch.as_tensor(t, dtype=noisy.dtype)
        if t.dim() == 0:
            t = t.expand(b)
        if bool(((t < 0) | (t > 1)).any()):
            raise DomainError(f"timestep must lie in [0, 1], got {t.tolist()}")
        if text.shape[0] != b:
            text = text.expand(b, -1, -1)

        tokens, vol = self.patchify(torch.cat([noisy, lq], dim=-1))
        x = self.embed(tokens)
        ctx = self.text_embed(text)
        cond = self.condition(text, t)
        for block in self.blocks:
            x, ctx = block(x, ctx, cond, vol, counter)
        out = self.unpatchify(self.head(x), vol)
        return out[0] if single else out

    def layouts(self, volume) -> list[WindowLayout]:
        return [blk.layout(Volume3(*volume)) for blk in self.blocks]


def dit_forward(model: SwinMMDiT, noisy_latent, lq_latent, text, t):
    return model(noisy_latent, lq_latent, text, t)


def save_model(path: str | Path, model: nn.Module, cfg) -> None:
    """Write weights as a tensor container and the config as a JSON sidecar."""
    path = Path(path)
    tensorio.save_tensors(path, {k: v.detach().contiguous() for k, v in model.state_dict().items()})
    path.with_suffix(".json").write_text(cfg.to_json())


def load_dit(path: str | Path) -> SwinMMDiT:
    path = Path(path)
    cfg = ModelConfig.from_dict(json.loads(path.with_suffix(".json").read_text()))
    model = SwinMMDiT(cfg)
    model.load_state_dict(tensorio.load_tensors(path))
    return model
