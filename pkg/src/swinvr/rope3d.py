"""Three-axis rotary position embedding.

The head dimension is split into temporal, height and width chunks; inside
chunk ``a`` the coordinate pairs ``(2i, 2i + 1)`` are rotated by
``pos_a * base ** (-2i / d_a)``. Logits between rotated queries and keys then
depend only on position differences, so window-local coordinates are as
good as global ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DimensionError


def default_axis_dims(head_dim: int) -> tuple[int, int, int]:
    """Even split roughly proportional to 1:2:2 over (t, h, w); spare pairs go to space."""
    if head_dim % 2 or head_dim < 6:
        raise ConfigError(f"head_dim must be even and >= 6 for a 3-axis split, got {head_dim}")
    d_t = max(2, 2 * (head_dim // 10))
    rest = head_dim - d_t
    half = rest // 2
    if half % 2:
        return (d_t, half + 1, half - 1)
    return (d_t, half, half)


@dataclass(frozen=True)
class RopeParams:
    head_dim: int
    axis_dims: tuple[int, int, int] | None = None
    base: float = 10000.0

    def __post_init__(self):
        dims = self.axis_dims if self.axis_dims is not None else default_axis_dims(self.head_dim)
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3:
            raise ConfigError(f"need three axis dims, got {dims}")
        if any(d % 2 or d < 2 for d in dims):
            raise ConfigError(f"axis dims must be even and >= 2, got {dims}")
        if sum(dims) != self.head_dim:
            raise ConfigError(f"axis dims {dims} do not sum to head_dim {self.head_dim}")
        object.__setattr__(self, "axis_dims", dims)


def rope_angles(positions: torch.Tensor | np.ndarray, params: RopeParams, dtype=torch.float32) -> torch.Tensor:
    """Rotation angles of shape ``(..., head_dim // 2)`` for ``(..., 3)`` integer positions."""
    pos = torch.as_tensor(np.asarray(positions), dtype=torch.float64)
    if pos.shape[-1] != 3:
        raise DimensionError(f"positions must end in a (t, h, w) triple, got shape {tuple(pos.shape)}")
    parts = []
    for axis, d in enumerate(params.axis_dims):
        inv_freq = params.base ** (-torch.arange(0, d, 2, dtype=torch.float64) / d)
        parts.append(pos[..., axis : axis + 1] * inv_freq)
    return torch.cat(parts, dim=-1).to(dtype)


def rope_cos_sin(positions, params: RopeParams, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    # trig in float64, then cast: keeps large-angle rounding out of float32 logits
    ang = rope_angles(positions, params, dtype=torch.float64)
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive pairs of the last axis of ``x``; cos/sin broadcast against ``x[..., ::2]``."""
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    r1 = x1 * cos - x2 * sin
    r2 = x1 * sin + x2 * cos
    return torch.stack((r1, r2), dim=-1).flatten(-2)


def rope_rotate(x: torch.Tensor, positions, params: RopeParams) -> torch.Tensor:
    """Rotate rows of ``x`` (``(..., n, head_dim)``) by their ``(n, 3)`` positions."""
    if x.shape[-1] != params.head_dim:
        raise DimensionError(f"last dim {x.shape[-1]} != head_dim {params.head_dim}")
    cos, sin = rope_cos_sin(positions, params, x.dtype)
    if x.dim() < 2 or cos.dim() < 2 or cos.shape[-2] != x.shape[-2]:
        raise DimensionError(f"positions of shape {tuple(cos.shape[:-1])} do not match rows of {tuple(x.shape)}")
    return apply_rotary(x, cos, sin)
