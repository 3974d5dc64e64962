"""Rectified-flow objective, Euler sampler and LQ-condition noising.

Interpolant ``x_t = (1 - t) x0 + t eps`` with velocity target ``eps - x0``.
The LQ latent is lightly diffused with the same schedule,
``c_tau = alpha(tau) c + sigma(tau) eps'`` for small ``tau``.

A model here is any callable ``model(x_t, cond, text, t) -> velocity``;
:class:`~swinvr.mmdit.SwinMMDiT` fits that signature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import DimensionError, DomainError

VelocityModel = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]

T_TRAIN_MIN = 0.001
T_TRAIN_MAX = 0.999
TAU_MAX = 0.25
TAU_INFER = 0.1


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear schedule: alpha(t) = 1 - t, sigma(t) = t."""

    def alpha(self, t):
        return 1.0 - t

    def sigma(self, t):
        return t


LINEAR = NoiseSchedule()


def _check_unit(t, name="t"):
    tt = torch.as_tensor(t)
    if bool(((tt < 0) | (tt > 1)).any()):
        raise DomainError(f"{name} must lie in [0, 1], got {tt.tolist()}")


def _bcast(t, x: torch.Tensor) -> torch.Tensor:
    # scalar or per-sample (B,) -> broadcastable over x
    tt = torch.as_tensor(t, dtype=x.dtype)
    if tt.dim() == 0:
        return tt
    return tt.view(-1, *([1] * (x.dim() - 1)))


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t, schedule: NoiseSchedule = LINEAR) -> torch.Tensor:
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    _check_unit(t)
    tb = _bcast(t, x0)
    return schedule.alpha(tb) * x0 + schedule.sigma(tb) * eps


def condition_noise(
    c_lq: torch.Tensor, tau, eps: torch.Tensor, schedule: NoiseSchedule = LINEAR, tau_max: float = TAU_MAX
) -> torch.Tensor:
    if c_lq.shape != eps.shape:
        raise DimensionError(f"condition {tuple(c_lq.shape)} and eps {tuple(eps.shape)} differ")
    tt = torch.as_tensor(tau)
    if bool(((tt < 0) | (tt > tau_max)).any()):
        raise DomainError(f"tau must lie in [0, {tau_max}], got {tt.tolist()}")
    tb = _bcast(tau, c_lq)
    return schedule.alpha(tb) * c_lq + schedule.sigma(tb) * eps


def generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)


def sample_seed(global_seed: int, sample_index: int) -> int:
    """Per-sample RNG stream id; identical under serial and parallel data orders."""
    return int(global_seed) ^ int(sample_index)


@dataclass
class FlowDraw:
    """Random quantities behind one flow-matching loss evaluation."""

    eps: torch.Tensor
    cond_eps: torch.Tensor
    tau: torch.Tensor


def draw_flow_noise(shape, seed: int, tau=None, tau_max: float = TAU_MAX, dtype=torch.float32) -> FlowDraw:
    gen = generator(seed)
    eps = torch.randn(shape, generator=gen, dtype=dtype)
    cond_eps = torch.randn(shape, generator=gen, dtype=dtype)
    if tau is None:
        b = shape[0] if len(shape) == 5 else 1
        tau = torch.rand(b, generator=gen, dtype=dtype) * tau_max
        if len(shape) != 5:
            tau = tau[0]
    return FlowDraw(eps, cond_eps, torch.as_tensor(tau, dtype=dtype))


def fm_loss(
    model: VelocityModel, x0, lq_latent, text, t, seed: int, tau=None, draw: FlowDraw | None = None
) -> torch.Tensor:
    """Mean squared error between predicted and straight-path velocity ``eps - x0``.

    ``t`` is a scalar or per-sample tensor in (0, 1). Noise for both the target
    and the condition comes from ``seed`` unless ``draw`` is given.
    """
    tt = torch.as_tensor(t)
    if bool(((tt <= 0) | (tt >= 1)).any()):
        raise DomainError(f"training t must lie in (0, 1), got {tt.tolist()}")
    if x0.shape != lq_latent.shape:
        raise DimensionError(f"x0 {tuple(x0.shape)} and LQ latent {tuple(lq_latent.shape)} differ")
    if draw is None:
        draw = draw_flow_noise(x0.shape, seed, tau, dtype=x0.dtype)
    x_t = add_noise(x0, draw.eps, t)
    cond = condition_noise(lq_latent, draw.tau, draw.cond_eps)
    v = model(x_t, cond, text, torch.as_tensor(t, dtype=x0.dtype))
    return ((v - (draw.eps - x0)) ** 2).mean()


def sample_t(n: int, rng: np.random.Generator, lo: float = T_TRAIN_MIN, hi: float = T_TRAIN_MAX) -> np.ndarray:
    """Uniform training timesteps on ``(lo, hi)``."""
    return rng.uniform(lo, hi, size=n)


def initial_noise(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    """Starting point at t = 1 used by :func:`sample_euler` for ``seed``."""
    return torch.randn(shape, generator=generator(seed), dtype=dtype)


@torch.no_grad()
def sample_euler(
    model: VelocityModel, lq_latent: torch.Tensor, text, steps: int, seed: int, tau: float = TAU_INFER
) -> torch.Tensor:
    """Integrate the flow from seeded noise at t = 1 down to t = 0 in uniform Euler steps."""
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    gen = generator(seed)
    x = torch.randn(lq_latent.shape, generator=gen, dtype=lq_latent.dtype)
    cond_eps = torch.randn(lq_latent.shape, generator=gen, dtype=lq_latent.dtype)
    cond = condition_noise(lq_latent, tau, cond_eps)
    ts = torch.linspace(1.0, 0.0, steps + 1, dtype=torch.float64)
    batch = lq_latent.shape[0] if lq_latent.dim() == 5 else None
    for i in range(steps):
        t_cur, t_next = ts[i], ts[i + 1]
        t_in = t_cur.to(lq_latent.dtype)
        if batch is not None:
            t_in = t_in.expand(batch)
        v = model(x, cond, text, t_in)
        x = x - float(t_cur - t_next) * v
    return x


def null_prompt_dropout(text: torch.Tensor, p: float, seed: int) -> torch.Tensor:
    """With probability ``p`` replace the embedding by zeros of the same shape."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    u = torch.rand((), generator=generator(seed)).item()
    return torch.zeros_like(text) if u < p else text
