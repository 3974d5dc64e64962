"""Window-size ablation: exact pair counts plus measured forward time per grid point."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .metrics import CostReport, attention_pair_count
from .mmdit import ModelConfig, SwinMMDiT
from .window_layout import Volume3, WindowSpec, partition

BENCH_COLUMNS = [
    "t", "h", "w", "shifted", "N", "L", "windows",
    "vv_pairs", "vt_pairs", "tq_pairs", "full_pairs",
    "sec_per_forward", "psnr_holdout",
]  # fmt: skip
COST_ONLY = "cost-only"


@dataclass
class BenchGrid:
    """Toy mirror of a (temporal length) x (spatial window) table at a fixed token budget."""

    volume: tuple[int, int, int] = (5, 16, 16)
    text_len: int = 256
    temporal: list[int] = field(default_factory=lambda: [1, 5])
    spatial: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    shifted: list[bool] = field(default_factory=lambda: [False])
    model: dict = field(default_factory=lambda: {"depth": 2, "dim": 32, "heads": 2, "text_dim": 32})
    repeats: int = 3
    seed: int = 0
    quality: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> BenchGrid:
        return cls(**d)

    def points(self):
        for t in self.temporal:
            for s in self.spatial:
                for sh in self.shifted:
                    yield WindowSpec(t, s, s, bool(sh))


def time_forward(cfg: ModelConfig, volume, text_len: int, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one no-grad DiT forward, after one warm-up call."""
    torch.manual_seed(seed)
    model = SwinMMDiT(cfg).eval()
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(*volume, cfg.latent_channels, generator=gen)
    text = torch.randn(text_len, cfg.text_dim, generator=gen)
    best = float("inf")
    with torch.no_grad():
        model(x, x, text, 0.5)
        for _ in range(repeats):
            t0 = time.perf_counter()
            model(x, x, text, 0.5)
            best = min(best, time.perf_counter() - t0)
    return best


def _row(rep: CostReport, psnr_value) -> dict:
    return {
        "t": rep.spec.t, "h": rep.spec.h, "w": rep.spec.w, "shifted": int(rep.spec.shifted),
        "N": rep.volume.numel, "L": rep.text_len, "windows": rep.windows,
        "vv_pairs": rep.vv_pairs, "vt_pairs": rep.vt_pairs, "tq_pairs": rep.tq_pairs,
        "full_pairs": rep.full_pairs,
        "sec_per_forward": "" if rep.sec_per_forward is None else f"{rep.sec_per_forward:.6f}",
        "psnr_holdout": psnr_value,
    }  # fmt: skip


def _quality(grid: BenchGrid, spec: WindowSpec):
    q = grid.quality or {}
    ckpt = (q.get("checkpoints") or {}).get(f"{spec.t}x{spec.h}x{spec.w}")
    if not ckpt or not Path(ckpt).exists() or "vae" not in q or "holdout_cache" not in q:
        return COST_ONLY
    from .experiment import evaluate_checkpoint  # heavy; only for quality rows

    report = evaluate_checkpoint(ckpt, q["vae"], q["holdout_cache"], steps=q.get("steps", 10))
    return f"{report['psnr_restored']:.4f}"


def bench_window(grid: BenchGrid, timed: bool = True) -> list[dict]:
    rows = []
    for spec in grid.points():
        rep = attention_pair_count(grid.volume, spec, spec.shifted, grid.text_len)
        if timed:
            cfg = ModelConfig(**{**grid.model, "window": spec.extent})
            rep.sec_per_forward = time_forward(cfg, grid.volume, grid.text_len, grid.repeats, grid.seed)
        rows.append(_row(rep, _quality(grid, spec)))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def grid_layouts(grid: BenchGrid):
    return [partition(Volume3(*grid.volume), spec) for spec in grid.points()]
