"""PSNR/SSIM and exact attention-cost accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .errors import DimensionError, DomainError
from .window_layout import Volume3, WindowSpec, partition

PSNR_CAP = 99.0


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _as_numpy(a), _as_numpy(b)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian filter restricted to fully-covered pixels
    pad = (g.size - 1) // 2
    out = correlate1d(correlate1d(img, g, axis=-2, mode="constant"), g, axis=-1, mode="constant")
    return out[..., pad:-pad, pad:-pad]


def _ssim_maps(a, b, data_range, win_size, sigma, k1, k2):
    a, b = _as_numpy(a), _as_numpy(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None, ..., None], b[None, ..., None]
    elif a.ndim == 3:
        a, b = a[None], b[None]
    elif a.ndim != 4:
        raise DimensionError(f"ssim expects 2-4 dims, got {a.ndim}")
    if a.shape[1] < win_size or a.shape[2] < win_size:
        raise DomainError(f"frames of {a.shape[1]}x{a.shape[2]} are smaller than the {win_size}x{win_size} window")
    # (T, C, H, W)
    a = np.moveaxis(a, -1, 1)
    b = np.moveaxis(b, -1, 1)
    g = _gaussian_window(win_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * s_ab + c2) / (s_aa + s_bb + c2)
    return lum, cs


def ssim(a, b, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over frames and channels.

    Accepts ``(H, W)``, ``(H, W, C)`` or ``(T, H, W, C)`` arrays.
    """
    lum, cs = _ssim_maps(a, b, data_range, win_size, sigma, k1, k2)
    return float(np.mean(lum * cs))


def ssim_contrast_structure(a, b, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5, k2=0.03) -> float:
    """Mean of the contrast-structure factor of SSIM (the part that ignores local means)."""
    _, cs = _ssim_maps(a, b, data_range, win_size, sigma, 0.01, k2)
    return float(np.mean(cs))


@dataclass
class CostReport:
    volume: Volume3
    spec: WindowSpec
    text_len: int
    windows: int
    vv_pairs: int
    vt_pairs: int
    tq_pairs: int
    full_pairs: int
    sec_per_forward: float | None = None

    @property
    def total_pairs(self) -> int:
        return self.vv_pairs + self.vt_pairs + self.tq_pairs

    @property
    def text_pairs(self) -> int:
        return self.vt_pairs + self.tq_pairs


def attention_pair_count(volume, spec: WindowSpec, shifted: bool, text_len: int) -> CostReport:
    """Closed-form pair counts over the window sizes ``n_i`` of the layout.

    video-video ``sum n_i^2``, video-text ``sum n_i L``, text queries
    ``sum L (n_i + L)``; full attention is ``(N + L)^2``.
    """
    vol = Volume3(*volume)
    layout = partition(vol, spec.with_shift(shifted))
    sizes = [int(n) for n in layout.sizes]
    L = int(text_len)
    vv = sum(n * n for n in sizes)
    vt = sum(n * L for n in sizes)
    tq = sum(L * (n + L) for n in sizes)
    full = (vol.numel + L) ** 2
    return CostReport(vol, spec.with_shift(shifted), L, len(sizes), vv, vt, tq, full)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])
