"""Causal video VAE: 4x temporal, 8x spatial compression into 16 latent channels.

Every temporal operation looks only at the past: convolutions pad with
``k_t - 1`` copies of the first frame on the past side, normalisation is
per frame, and temporal strides keep frame 0 on its own. Frame 0 therefore
maps to latent 0 and each later group of four frames to one latent, so an
image is a one-frame video and a ``4k + 1`` clip encodes identically whether
or not future frames follow it.

Videos are channel-last ``(T, H, W, 3)`` in ``[0, 1]``; latents are
``(T', H', W', 16)`` with ``T' = 1 + (T - 1) / 4``, ``H' = H / 8``, ``W' = W / 8``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from . import tensorio
from .errors import ConfigError, DimensionError, DomainError, ShapeError
from .tensor_core import silu

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0


def validate_video(video: torch.Tensor) -> None:
    if video.dim() not in (4, 5) or video.shape[-1] != 3:
        raise ShapeError(f"video must be (T, H, W, 3) or (B, T, H, W, 3), got {tuple(video.shape)}")
    t, h, w = video.shape[-4:-1]
    if (t - 1) % 4:
        raise ShapeError(f"frame count {t} violates T = 1 (mod 4)")
    if h % 8 or w % 8:
        raise ShapeError(f"spatial size {h}x{w} violates H, W = 0 (mod 8)")
    if bool((video < 0).any()) or bool((video > 1).any()):
        raise DomainError("video values must lie in [0, 1]")


def latent_shape(t: int, h: int, w: int, channels: int = 16) -> tuple[int, int, int, int]:
    return (1 + (t - 1) // 4, h // 8, w // 8, channels)


def causal_conv3d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride=(1, 1, 1),
    spatial_pad: bool = True,
) -> torch.Tensor:
    """3D convolution on ``(B, C, T, H, W)`` that never reads future frames.

    Past-side temporal padding replicates the first frame ``k_t - 1`` times;
    spatial padding is symmetric zero padding of ``k // 2`` (none if
    ``spatial_pad`` is false, as for patch-embedding kernels).
    """
    if x.dim() != 5 or weight.dim() != 5:
        raise DimensionError(f"expected 5-D input and weight, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    kt, kh, kw = weight.shape[2:]
    st, sh, sw = stride
    if kt < 1:
        raise DimensionError("temporal kernel size must be >= 1")
    if st > 1 and (x.shape[2] - 1) % st:
        raise DimensionError(f"{x.shape[2]} frames incompatible with temporal stride {st} (need 1 + k*{st})")
    if kt > 1:
        x = torch.cat([x[:, :, :1].expand(-1, -1, kt - 1, -1, -1), x], dim=2)
    pad = (0, kh // 2, kw // 2) if spatial_pad else 0
    return F.conv3d(x, weight, bias, stride=(st, sh, sw), padding=pad)


class CausalConv3d(nn.Module):
    def __init__(self, cin: int, cout: int, kernel=3, stride=(1, 1, 1)):
        super().__init__()
        k = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        self.stride = tuple(stride)
        self.conv = nn.Conv3d(cin, cout, k)

    def forward(self, x):
        return causal_conv3d(x, self.conv.weight, self.conv.bias, self.stride)


class PatchEmbed(nn.Module):
    """Causal (4, 8, 8) patch projection: frame 0 alone, then each group of four frames.

    With three replicated past frames, a kernel-equals-stride conv sees exactly
    ``[x0, x0, x0, x0]`` for latent 0 and ``x[4j-3 : 4j+1]`` for latent ``j``.
    """

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, (4, 8, 8), stride=(4, 8, 8))

    def forward(self, x):
        return causal_conv3d(x, self.conv.weight, self.conv.bias, (4, 8, 8), spatial_pad=False)


class PatchUnembed(nn.Module):
    """Adjoint of :class:`PatchEmbed`: each latent emits a (4, 8, 8) block; the first three frames are dropped."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.ConvTranspose3d(cin, cout, (4, 8, 8), stride=(4, 8, 8))

    def forward(self, z):
        return self.conv(z)[:, :, 3:]


class FrameGroupNorm(nn.GroupNorm):
    """GroupNorm with statistics per frame, so normalisation stays causal."""

    def forward(self, x):
        b, c, t, h, w = x.shape
        y = super().forward(x.transpose(1, 2).reshape(b * t, c, h, w))
        return y.view(b, t, c, h, w).transpose(1, 2)


class ResBlock3d(nn.Module):
    def __init__(self, cin: int, cout: int, groups: int):
        super().__init__()
        self.norm1 = FrameGroupNorm(groups, cin)
        self.conv1 = CausalConv3d(cin, cout)
        self.norm2 = FrameGroupNorm(groups, cout)
        self.conv2 = CausalConv3d(cout, cout)
        self.skip = CausalConv3d(cin, cout, kernel=1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = self.conv1(silu(self.norm1(x)))
        h = self.conv2(silu(self.norm2(h)))
        return self.skip(x) + h


class Upsample(nn.Module):
    """Nearest 2x spatial (and optionally causal 2x temporal: T -> 2T - 1) then a causal conv."""

    def __init__(self, cin: int, cout: int, temporal: bool):
        super().__init__()
        self.temporal = temporal
        self.conv = CausalConv3d(cin, cout)

    def forward(self, x):
        if self.temporal:
            x = x.repeat_interleave(2, dim=2)[:, :, 1:]
        x = x.repeat_interleave(2, dim=3).repeat_interleave(2, dim=4)
        return self.conv(x)


@dataclass
class VAEConfig:
    """Toy widths; stem width then one width per stride-2 stage.

    Stage order (encoder): stage 1 spatial only, stages 2 and 3 spatial and
    temporal. The decoder mirrors it.
    """

    stem: int = 16
    channels: tuple[int, int, int] = (32, 64, 64)
    temporal_stages: tuple[bool, bool, bool] = (False, True, True)
    latent_channels: int = 16
    groups: int = 8
    res_blocks: int = 1
    patch_shortcut: bool = True  # linear patch path alongside the conv stack

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.temporal_stages = tuple(self.temporal_stages)
        if len(self.channels) != 3 or len(self.temporal_stages) != 3:
            raise ConfigError("need exactly three downsampling stages")
        if sum(self.temporal_stages) != 2:
            raise ConfigError("exactly two stages must stride time (4x temporal)")
        for c in (self.stem, *self.channels):
            if c % self.groups:
                raise ConfigError(f"width {c} not divisible by {self.groups} groups")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _zero(conv: CausalConv3d) -> None:
    # the conv stack starts as a no-op, so training begins from the linear patch autoencoder
    nn.init.zeros_(conv.conv.weight)
    nn.init.zeros_(conv.conv.bias)


class Encoder(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        g = cfg.groups
        self.conv_in = CausalConv3d(3, cfg.stem)
        layers = []
        cin = cfg.stem
        for cout, temporal in zip(cfg.channels, cfg.temporal_stages):
            layers.append(CausalConv3d(cin, cout, stride=(2 if temporal else 1, 2, 2)))
            layers += [ResBlock3d(cout, cout, g) for _ in range(cfg.res_blocks)]
            cin = cout
        self.down = nn.Sequential(*layers)
        self.mid = ResBlock3d(cin, cin, g)
        self.norm_out = FrameGroupNorm(g, cin)
        self.conv_out = CausalConv3d(cin, 2 * cfg.latent_channels)
        self.shortcut = PatchEmbed(3, 2 * cfg.latent_channels) if cfg.patch_shortcut else None
        if self.shortcut is not None:
            _zero(self.conv_out)

    def forward(self, x):
        h = self.mid(self.down(self.conv_in(x)))
        out = self.conv_out(silu(self.norm_out(h)))
        if self.shortcut is not None:
            out = out + self.shortcut(x)
        return out


class Decoder(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        g = cfg.groups
        widths = list(cfg.channels)
        self.conv_in = CausalConv3d(cfg.latent_channels, widths[-1])
        self.mid = ResBlock3d(widths[-1], widths[-1], g)
        layers = []
        outs = [cfg.stem] + widths[:-1]
        for i in reversed(range(3)):
            layers.append(Upsample(widths[i], outs[i], cfg.temporal_stages[i]))
            layers += [ResBlock3d(outs[i], outs[i], g) for _ in range(cfg.res_blocks)]
        self.up = nn.Sequential(*layers)
        self.norm_out = FrameGroupNorm(g, cfg.stem)
        self.conv_out = CausalConv3d(cfg.stem, 3)
        self.shortcut = PatchUnembed(cfg.latent_channels, 3) if cfg.patch_shortcut else None
        if self.shortcut is not None:
            _zero(self.conv_out)

    def forward(self, z):
        h = self.up(self.mid(self.conv_in(z)))
        out = self.conv_out(silu(self.norm_out(h)))
        if self.shortcut is not None:
            out = out + self.shortcut(z)
        return out


def _to_channels_first(x):
    return x.permute(0, 4, 1, 2, 3)


def _to_channels_last(x):
    return x.permute(0, 2, 3, 4, 1)


class CausalVideoVAE(nn.Module):
    def __init__(self, cfg: VAEConfig | None = None):
        super().__init__()
        self.cfg = cfg or VAEConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(self.cfg)

    def encode(self, video: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return latent ``(mean, logvar)``, each ``(T', H', W', 16)`` (batch dim kept if given)."""
        validate_video(video)
        single = video.dim() == 4
        x = _to_channels_first(video[None] if single else video) * 2 - 1
        moments = _to_channels_last(self.encoder(x))
        mean, logvar = moments.chunk(2, dim=-1)
        logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)
        if single:
            return mean[0], logvar[0]
        return mean, logvar

    def decode_raw(self, latent: torch.Tensor) -> torch.Tensor:
        c = self.cfg.latent_channels
        if latent.dim() not in (4, 5) or latent.shape[-1] != c:
            raise ShapeError(f"latent must have {c} channels, got shape {tuple(latent.shape)}")
        single = latent.dim() == 4
        y = self.decoder(_to_channels_first(latent[None] if single else latent))
        y = (_to_channels_last(y) + 1) / 2
        return y[0] if single else y

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Decode to a ``[0, 1]``-clamped video."""
        return self.decode_raw(latent).clamp(0.0, 1.0)


def sample_latent(mean: torch.Tensor, logvar: torch.Tensor, seed: int) -> torch.Tensor:
    if mean.shape != logvar.shape:
        raise DimensionError(f"mean {tuple(mean.shape)} and logvar {tuple(logvar.shape)} differ")
    gen = torch.Generator().manual_seed(int(seed))
    eps = torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
    return mean + torch.exp(logvar.clamp(min=LOGVAR_MIN) / 2) * eps


def vae_loss(recon, target, mean, logvar, beta: float = 1e-4) -> torch.Tensor:
    """Mean absolute error plus ``beta`` times the per-element KL to N(0, I)."""
    if recon.shape != target.shape:
        raise DimensionError(f"recon {tuple(recon.shape)} and target {tuple(target.shape)} differ")
    l1 = (recon - target).abs().mean()
    kl = 0.5 * (mean * mean + torch.exp(logvar) - 1.0 - logvar)
    return l1 + beta * kl.mean()


def save_vae(path: str | Path, vae: CausalVideoVAE) -> None:
    path = Path(path)
    tensorio.save_tensors(path, {k: v.detach().contiguous() for k, v in vae.state_dict().items()})
    path.with_suffix(".json").write_text(vae.cfg.to_json())


def load_vae(path: str | Path) -> CausalVideoVAE:
    path = Path(path)
    cfg = VAEConfig(**json.loads(path.with_suffix(".json").read_text()))
    vae = CausalVideoVAE(cfg)
    vae.load_state_dict(tensorio.load_tensors(path))
    return vae
