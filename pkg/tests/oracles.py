"""Slow, loop-based reference implementations used only by the tests."""

import math

import numpy as np
import torch

from swinvr.rope3d import rope_rotate


def _proj(lin, x, heads):
    q, k, v = lin(x).chunk(3, dim=-1)
    hd = q.shape[-1] // heads
    return [t.view(-1, heads, hd) for t in (q, k, v)]  # (n, h, hd)


def _sdpa(q, k, v):
    s = q @ k.T / math.sqrt(q.shape[-1])
    s = s - s.max(dim=-1, keepdim=True).values
    p = torch.exp(s)
    return (p / p.sum(-1, keepdim=True)) @ v


def window_attention_reference(video, text, layout, wts, rope=None):
    """Per-window attention straight from the definition, one head and one window at a time."""
    h = wts.heads
    qv, kv, vv = _proj(wts.video_qkv, video, h)
    qt, kt, vt = _proj(wts.text_qkv, text, h)
    n_tok, length = video.shape[0], text.shape[0]
    vid = torch.zeros(n_tok, h, wts.head_dim, dtype=video.dtype)
    txt = torch.zeros(layout.num_windows, length, h, wts.head_dim, dtype=video.dtype)
    for wi, win in enumerate(layout.windows):
        idx = torch.from_numpy(win.indices.astype(np.int64))
        for head in range(h):
            q, k = qv[idx, head], kv[idx, head]
            if rope is not None:
                pos = win.local_positions()
                q, k = rope_rotate(q, pos, rope), rope_rotate(k, pos, rope)
            K = torch.cat([k, kt[:, head]])
            V = torch.cat([vv[idx, head], vt[:, head]])
            vid[idx, head] = _sdpa(q, K, V)
            txt[wi, :, head] = _sdpa(qt[:, head], K, V)
    video_out = wts.video_out(vid.reshape(n_tok, -1))
    text_out = wts.text_out(txt.mean(0).reshape(length, -1))
    return video_out, text_out


def brute_pair_counts(layout, length):
    vv = vt = tq = 0
    for win in layout.windows:
        toks = list(win.indices)
        for _q in toks:
            vv += sum(1 for _ in toks)
            vt += length
        tq += length * (len(toks) + length)
    return vv, vt, tq
