"""Dense tensor kernels on top of torch, plus a finite-difference gradient checker.

Layout convention used throughout the package: row-major, channel-last,
``(T, H, W, C)`` for volumes and ``(N, d)`` for flattened token sequences.
float32 is the working dtype; float64 is reserved for gradient checks.

Reverse-mode differentiation is delegated to torch autograd. The finite
difference path in :func:`grad_check` shares nothing with it beyond the
forward function, so it stays an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ConfigError, DimensionError, EvaluationError

ScalarFn = Callable[[], torch.Tensor]


def ensure_finite(x: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise EvaluationError(f"{what} contains NaN or Inf")
    return x


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product of ``(m, k)`` and ``(k, n)`` operands."""
    if a.dim() != 2 or b.dim() != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return ensure_finite(a @ b, "matmul output")


def softmax_lastdim(x: torch.Tensor) -> torch.Tensor:
    """Numerically stable softmax over the last axis (max subtracted first)."""
    if x.dim() == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last dimension, got shape {tuple(x.shape)}")
    z = x - x.amax(dim=-1, keepdim=True)
    e = torch.exp(z)
    return ensure_finite(e / e.sum(dim=-1, keepdim=True), "softmax output")


def layer_norm(
    x: torch.Tensor,
    eps: float = 1e-6,
    weight: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Normalise each row over the last axis to zero mean and unit (biased) variance."""
    if x.dim() == 0 or x.shape[-1] < 1:
        raise DimensionError(f"layer_norm needs a last dimension >= 1, got {tuple(x.shape)}")
    d = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and tuple(p.shape) != (d,):
            raise DimensionError(f"layer_norm {name} has shape {tuple(p.shape)}, expected ({d},)")
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    y = centered / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return ensure_finite(y, "layer_norm output")


def gelu_tanh(x: torch.Tensor) -> torch.Tensor:
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + torch.tanh(c * (x + 0.044715 * x * x * x)))


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference comparison.

    ``coords`` lists ``(param_index, flat_index)`` pairs in the order checked;
    ``analytic`` and ``numeric`` are aligned with it.
    """

    max_rel_error: float
    max_abs_error: float
    coords: list[tuple[int, int]] = field(default_factory=list)
    analytic: np.ndarray = field(default_factory=lambda: np.zeros(0))
    numeric: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_checked(self) -> int:
        return len(self.coords)


def _scalar(f: ScalarFn) -> float:
    with torch.no_grad():
        v = f()
    if v.numel() != 1:
        raise DimensionError(f"gradient check needs a scalar function, got shape {tuple(v.shape)}")
    val = float(v)
    if not math.isfinite(val):
        raise EvaluationError("function value is not finite")
    return val


def grad_check(
    f: ScalarFn,
    params: Sequence[torch.Tensor],
    h: float = 1e-5,
    n_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare autograd gradients of ``f`` against central differences.

    ``f`` takes no arguments and closes over ``params`` (float64 leaf tensors).
    The numeric derivative is ``(f(p + h) - f(p - h)) / (2h)`` per coordinate.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``. If ``n_coords`` is
    given, that many coordinates are drawn without replacement across all
    parameters; otherwise every coordinate is checked.
    """
    params = list(params)
    for i, p in enumerate(params):
        if p.dtype != torch.float64:
            raise ConfigError(f"grad_check needs float64 parameters; param {i} is {p.dtype}")
        if not p.requires_grad:
            raise ConfigError(f"param {i} does not require grad")

    out = f()
    if out.numel() != 1:
        raise DimensionError(f"gradient check needs a scalar function, got shape {tuple(out.shape)}")
    if not math.isfinite(out.item()):
        raise EvaluationError("function value is not finite")
    grads = torch.autograd.grad(out, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, grads)]

    sizes = [p.numel() for p in params]
    all_coords = [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    if n_coords is not None and n_coords < len(all_coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(all_coords), size=n_coords, replace=False)
        coords = [all_coords[k] for k in sorted(pick)]
    else:
        coords = all_coords

    analytic = np.empty(len(coords))
    numeric = np.empty(len(coords))
    for k, (i, j) in enumerate(coords):
        flat = params[i].data.view(-1)
        orig = flat[j].item()
        flat[j] = orig + h
        fp = _scalar(f)
        flat[j] = orig - h
        fm = _scalar(f)
        flat[j] = orig
        numeric[k] = (fp - fm) / (2.0 * h)
        analytic[k] = grads[i].view(-1)[j].item()

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = abs_err / denom
    return GradCheckReport(
        max_rel_error=float(rel.max(initial=0.0)),
        max_abs_error=float(abs_err.max(initial=0.0)),
        coords=coords,
        analytic=analytic,
        numeric=numeric,
    )
