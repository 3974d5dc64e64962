"""Dual-stream (video / text) attention, full and windowed.

Video and text tokens carry separate Q/K/V/O projections. In the windowed
form each video window attends to its own keys plus the text keys; the text
queries are repeated across windows and their per-window outputs are averaged,
which keeps the text length fixed whatever the number of windows.

Windows of equal token count are stacked and processed as one batched matmul
(variable-length packing without padding); chunking only bounds memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DimensionError
from .rope3d import RopeParams, apply_rotary, rope_cos_sin
from .tensor_core import softmax_lastdim
from .window_layout import WindowLayout

# upper bound on attention-score elements materialised at once
MAX_SCORE_ELEMENTS = 1 << 24


@dataclass
class PairCounter:
    """Query-key pairs actually evaluated, per sample and per head."""

    video_video: int = 0
    video_text: int = 0
    text_query: int = 0

    @property
    def video_query(self) -> int:
        return self.video_video + self.video_text

    @property
    def total(self) -> int:
        return self.video_video + self.video_text + self.text_query


class MMAttention(nn.Module):
    """Projection weights for both modalities."""

    def __init__(self, dim: int, heads: int, qkv_bias: bool = True):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.video_qkv = nn.Linear(dim, 3 * dim, bias=qkv_bias)
        self.text_qkv = nn.Linear(dim, 3 * dim, bias=qkv_bias)
        self.video_out = nn.Linear(dim, dim)
        self.text_out = nn.Linear(dim, dim)

    def project(self, x: torch.Tensor, which: str) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        lin = self.video_qkv if which == "video" else self.text_qkv
        b, n, _ = x.shape
        q, k, v = lin(x).view(b, n, 3, self.heads, self.head_dim).unbind(dim=2)
        return q, k, v  # (B, n, heads, head_dim)


def _batched(x: torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x.unsqueeze(0), True
    if x.dim() == 3:
        return x, False
    raise DimensionError(f"{name} must be (n, d) or (B, n, d), got {tuple(x.shape)}")


def _check_inputs(video: torch.Tensor, text: torch.Tensor, wts: MMAttention):
    video, squeeze = _batched(video, "video")
    text, squeeze_t = _batched(text, "text")
    if squeeze_t and not squeeze:
        text = text.expand(video.shape[0], -1, -1)
    if video.shape[-1] != wts.dim or text.shape[-1] != wts.dim:
        raise DimensionError(f"feature widths {video.shape[-1]}/{text.shape[-1]} != attention dim {wts.dim}")
    if text.shape[0] != video.shape[0]:
        raise DimensionError(f"batch sizes differ: video {video.shape[0]}, text {text.shape[0]}")
    if text.shape[1] < 1:
        raise DimensionError("text length must be >= 1")
    return video, text, squeeze


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    scale = 1.0 / math.sqrt(q.shape[-1])
    weights = softmax_lastdim((q @ k.transpose(-1, -2)) * scale)
    return weights @ v


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    # (B, h, n, hd) -> (B, n, h * hd)
    b, h, n, hd = x.shape
    return x.transpose(1, 2).reshape(b, n, h * hd)


def full_mm_attention(
    video: torch.Tensor,
    text: torch.Tensor,
    wts: MMAttention,
    rope: RopeParams | None = None,
    positions=None,
    counter: PairCounter | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Joint attention over the concatenated ``[video; text]`` sequence."""
    video, text, squeeze = _check_inputs(video, text, wts)
    n, length = video.shape[1], text.shape[1]
    qv, kv, vv = wts.project(video, "video")
    qt, kt, vt = wts.project(text, "text")
    if rope is not None:
        if positions is None:
            raise ConfigError("RoPE requested without positions")
        cos, sin = rope_cos_sin(positions, rope, qv.dtype)
        cos, sin = cos[:, None, :], sin[:, None, :]  # (n, 1, hd/2)
        qv, kv = apply_rotary(qv, cos, sin), apply_rotary(kv, cos, sin)
    q = torch.cat([qv, qt], dim=1).transpose(1, 2)
    k = torch.cat([kv, kt], dim=1).transpose(1, 2)
    v = torch.cat([vv, vt], dim=1).transpose(1, 2)
    out = _merge_heads(_attend(q, k, v))
    if counter is not None:
        counter.video_video += n * n
        counter.video_text += n * length
        counter.text_query += length * (n + length)
    video_out = wts.video_out(out[:, :n])
    text_out = wts.text_out(out[:, n:])
    if squeeze:
        return video_out[0], text_out[0]
    return video_out, text_out


@dataclass(frozen=True)
class _Group:
    n: int
    window_ids: torch.Tensor  # (G,)
    token_index: torch.Tensor  # (G, n) flattened volume indices
    positions: np.ndarray  # (G, n, 3) window-local coordinates


@lru_cache(maxsize=256)
def _groups(layout: WindowLayout) -> tuple[_Group, ...]:
    out = []
    for n, wids in layout.size_groups:
        wins = [layout.windows[i] for i in wids]
        idx = np.stack([w.indices for w in wins]).astype(np.int64)
        pos = np.stack([w.local_positions() for w in wins])
        out.append(_Group(n, torch.from_numpy(wids.astype(np.int64)), torch.from_numpy(idx), pos))
    return tuple(out)


def window_mm_attention(
    video: torch.Tensor,
    text: torch.Tensor,
    layout: WindowLayout,
    wts: MMAttention,
    rope: RopeParams | None = None,
    counter: PairCounter | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Windowed dual-stream attention.

    Per window: video queries attend to ``cat(K_window, K_text)``; text queries
    attend to the same keys. RoPE (window-local coordinates) touches video
    queries/keys only. The returned text is the mean of per-window text outputs.
    """
    video, text, squeeze = _check_inputs(video, text, wts)
    b, n_tok, _ = video.shape
    length = text.shape[1]
    if n_tok != layout.volume.numel:
        raise DimensionError(f"{n_tok} video tokens for layout over volume {tuple(layout.volume)}")
    h, hd = wts.heads, wts.head_dim

    qv, kv, vv = wts.project(video, "video")  # (B, N, h, hd)
    qt, kt, vt = (x.transpose(1, 2) for x in wts.project(text, "text"))  # (B, h, L, hd)

    video_acc = torch.zeros_like(qv)
    text_per_window = qv.new_zeros((b, layout.num_windows, h, length, hd))

    for group in _groups(layout):
        n = group.n
        per_window = b * h * (n + length) * (n + length)
        chunk = max(1, MAX_SCORE_ELEMENTS // per_window)
        if rope is not None:
            cos_all, sin_all = rope_cos_sin(group.positions, rope, qv.dtype)  # (G, n, hd/2)
            cos_all, sin_all = cos_all[None, :, None], sin_all[None, :, None]  # (1, G, 1, n, hd/2)
        for start in range(0, group.token_index.shape[0], chunk):
            idx = group.token_index[start : start + chunk]
            wids = group.window_ids[start : start + chunk]
            g = idx.shape[0]
            flat = idx.reshape(-1)

            def gather(x):
                return x[:, flat].view(b, g, n, h, hd).permute(0, 1, 3, 2, 4)  # (B, g, h, n, hd)

            q, k, v = gather(qv), gather(kv), gather(vv)
            if rope is not None:
                cos, sin = cos_all[:, start : start + g], sin_all[:, start : start + g]
                q, k = apply_rotary(q, cos, sin), apply_rotary(k, cos, sin)
            k_cat = torch.cat([k, kt[:, None].expand(b, g, h, length, hd)], dim=-2)
            v_cat = torch.cat([v, vt[:, None].expand(b, g, h, length, hd)], dim=-2)

            out_v = _attend(q, k_cat, v_cat)  # (B, g, h, n, hd)
            video_acc[:, flat] = out_v.permute(0, 1, 3, 2, 4).reshape(b, g * n, h, hd)
            out_t = _attend(qt[:, None].expand(b, g, h, length, hd), k_cat, v_cat)
            text_per_window[:, wids] = out_t

            if counter is not None:
                counter.video_video += g * n * n
                counter.video_text += g * n * length
                counter.text_query += g * length * (n + length)

    text_mean = text_per_window.mean(dim=1)  # fixed window-index order
    video_out = wts.video_out(video_acc.reshape(b, n_tok, h * hd))
    text_out = wts.text_out(_merge_heads(text_mean))
    if squeeze:
        return video_out[0], text_out[0]
    return video_out, text_out
