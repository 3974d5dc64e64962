"""Toy end-to-end pipeline: VAE training, latent caches, progressive DiT training, evaluation.

All steps are seeded; a run directory holds everything needed to resume
evaluation: ``vae.svrt``, ``latent_stats.json``, per-stage caches under
``cache/``, DiT checkpoints and ``loss.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    CachedDataset,
    ColdDataset,
    DatasetSpec,
    DegradationRecipe,
    ProgressiveStage,
    collate,
    make_sample,
    precompute_cache,
    progressive_stages,
    random_crop,
    synth_video,
)
from .diffusion import fm_loss, null_prompt_dropout, sample_euler, sample_seed, sample_t
from .errors import ConfigError
from .metrics import psnr, ssim
from .mmdit import ModelConfig, SwinMMDiT, load_dit, save_model
from .vae import CausalVideoVAE, VAEConfig, load_vae, save_vae, vae_loss

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "stage", "loss"]


# ---------------------------------------------------------------- VAE


@dataclass
class VAETrainConfig:
    n_sources: int = 64
    source_frames: int = 9
    source_size: int = 64
    crop_frames: int = 5
    crop_size: int = 32
    batch: int = 4
    steps: int = 2000
    lr: float = 1e-3
    beta: float = 1e-4
    image_every: int = 4  # every k-th step trains on single frames
    seed: int = 1234
    vae: dict = field(default_factory=dict)


def train_vae(cfg: VAETrainConfig) -> tuple[CausalVideoVAE, list[float]]:
    """Reconstruction training on random crops of procedural clips."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sources = [
        synth_video(sample_seed(cfg.seed, i), cfg.source_frames, cfg.source_size, cfg.source_size)
        for i in range(cfg.n_sources)
    ]
    vae = CausalVideoVAE(VAEConfig(**cfg.vae))
    opt = torch.optim.Adam(vae.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.steps, eta_min=cfg.lr * 0.05)
    losses = []
    for step in range(cfg.steps):
        frames = 1 if cfg.image_every and step % cfg.image_every == cfg.image_every - 1 else cfg.crop_frames
        batch = []
        for _ in range(cfg.batch):
            src = sources[int(rng.integers(len(sources)))]
            t0 = int(rng.integers(0, src.shape[0] - frames + 1))
            batch.append(random_crop(src[t0 : t0 + frames], cfg.crop_size, cfg.crop_size, rng))
        x = torch.stack(batch)
        mean, logvar = vae.encode(x)
        loss = vae_loss(vae.decode_raw(mean), x, mean, logvar, cfg.beta)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(loss.item())
        if step % 200 == 0:
            log.info("vae step %d loss %.4f", step, losses[-1])
    return vae.eval(), losses


# ---------------------------------------------------------------- latents


@dataclass
class LatentStats:
    """Per-channel affine normalisation applied to HQ and LQ latents alike."""

    mean: list[float]
    std: list[float]

    def normalize(self, z: torch.Tensor) -> torch.Tensor:
        return (z - torch.tensor(self.mean, dtype=z.dtype)) / torch.tensor(self.std, dtype=z.dtype)

    def denormalize(self, z: torch.Tensor) -> torch.Tensor:
        return z * torch.tensor(self.std, dtype=z.dtype) + torch.tensor(self.mean, dtype=z.dtype)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> LatentStats:
        return cls(**json.loads(Path(path).read_text()))


def latent_stats(ds: CachedDataset) -> LatentStats:
    z = torch.cat([ds[i].hq_latent.reshape(-1, ds[i].hq_latent.shape[-1]) for i in range(len(ds))])
    z = z.double()
    return LatentStats(z.mean(0).tolist(), z.std(0).clamp_min(1e-3).tolist())


# ---------------------------------------------------------------- DiT


@dataclass
class TrainConfig:
    """Everything ``train-dit`` needs; JSON-serialisable."""

    model: dict = field(default_factory=dict)
    vae_train: dict = field(default_factory=dict)
    vae_path: str | None = None  # reuse a trained VAE instead of training one
    stage_iterations: tuple[int, int, int] = (1500, 1000, 800)
    ladder: tuple = ((5, 32, 32), (9, 64, 64), (21, 96, 96))
    final_mix: bool = True
    n_train: int = 64
    n_holdout: int = 16
    source_scale: float = 1.5  # oversized sources are cropped, never resized
    batch: dict = field(default_factory=lambda: {"1": 8, "5": 8, "9": 4, "21": 2})
    lr: float = 5e-4
    weight_decay: float = 0.0
    null_prompt_p: float = 0.1
    recipe: dict = field(default_factory=dict)
    eval_steps: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        if "ladder" in d:
            d["ladder"] = tuple(tuple(s) for s in d["ladder"])
        if "stage_iterations" in d:
            d["stage_iterations"] = tuple(d["stage_iterations"])
        return cls(**d)

    def stages(self) -> list[ProgressiveStage]:
        return progressive_stages(self.stage_iterations, self.ladder, self.final_mix)

    def batch_for(self, frames: int) -> int:
        return int(self.batch.get(str(frames), self.batch.get(frames, 2)))


def dataset_spec(cfg: TrainConfig, size, split: str, text_dim: int) -> DatasetSpec:
    t, h, w = size
    seed = cfg.seed * 1_000_003 + (0 if split == "train" else 7_919) + 31 * t + h
    n = cfg.n_train if split == "train" else cfg.n_holdout
    source = (int(round(h * cfg.source_scale / 8)) * 8, int(round(w * cfg.source_scale / 8)) * 8)
    return DatasetSpec(
        name=f"{split}_{t}x{h}x{w}",
        n_samples=n,
        frames=t,
        height=h,
        width=w,
        seed=seed,
        recipe=DegradationRecipe(**cfg.recipe),
        text_dim=text_dim,
        source=source,
    )


def ensure_cache(spec: DatasetSpec, vae: CausalVideoVAE, root: Path) -> CachedDataset:
    d = root / spec.name
    if not (d / "manifest.jsonl").exists():
        log.info("precomputing %s", spec.name)
        precompute_cache(spec, vae, d)
    return CachedDataset(d)


@dataclass
class TrainResult:
    model: SwinMMDiT
    vae: CausalVideoVAE
    stats: LatentStats
    losses: list[tuple[int, int, float]]
    stages: list[ProgressiveStage]
    run_dir: Path
    timings: dict = field(default_factory=dict)

    def stage_losses(self, stage: int) -> list[float]:
        return [l for _, s, l in self.losses if s == stage]


def smoothed_endpoints(losses: list[float], frac: float = 0.2) -> tuple[float, float]:
    """Mean loss over the first and the last ``frac`` of a stage."""
    k = max(1, int(len(losses) * frac))
    return float(np.mean(losses[:k])), float(np.mean(losses[-k:]))


def train_dit(cfg: TrainConfig, out: str | Path) -> TrainResult:
    """Train VAE (unless given), cache latents per stage size, then run the progressive schedule."""
    run = Path(out)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(json.dumps(asdict(cfg), indent=2, default=list))
    timings = {}
    t0 = time.perf_counter()
    if cfg.vae_path:
        vae = load_vae(cfg.vae_path).eval()
    else:
        vae, vae_losses = train_vae(VAETrainConfig(**cfg.vae_train))
        save_vae(run / "vae.svrt", vae)
        np.savetxt(run / "vae_loss.txt", np.asarray(vae_losses))
    timings["vae"] = time.perf_counter() - t0

    mcfg = ModelConfig.from_dict({**cfg.model, "latent_channels": vae.cfg.latent_channels})
    stages = cfg.stages()
    cache_root = run / "cache"
    t0 = time.perf_counter()
    train_sets = {}
    for st in stages:
        for size in st.sizes:
            if size not in train_sets:
                train_sets[size] = ensure_cache(dataset_spec(cfg, size, "train", mcfg.text_dim), vae, cache_root)
    timings["precompute"] = time.perf_counter() - t0
    stats = latent_stats(train_sets[stages[0].sizes[0]])
    stats.save(run / "latent_stats.json")

    torch.manual_seed(cfg.seed)
    model = SwinMMDiT(mcfg)
    rng = np.random.default_rng(cfg.seed)
    losses: list[tuple[int, int, float]] = []
    step = 0
    t0 = time.perf_counter()
    with open(run / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for si, st in enumerate(stages):
            opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
            sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, st.iterations, eta_min=cfg.lr * 0.1)
            for it in range(st.iterations):
                size = st.sizes[it % len(st.sizes)]
                ds = train_sets[size]
                b = cfg.batch_for(size[0])
                idx = rng.choice(len(ds), size=b, replace=False)
                hq, lq, text = collate([ds[int(i)] for i in idx])
                if cfg.null_prompt_p > 0:
                    text = torch.stack(
                        [null_prompt_dropout(tx, cfg.null_prompt_p, sample_seed(step, int(i))) for tx, i in zip(text, idx)]
                    )
                t = torch.as_tensor(sample_t(b, rng), dtype=torch.float32)
                loss = fm_loss(model, stats.normalize(hq), stats.normalize(lq), text, t, seed=sample_seed(cfg.seed, step))
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
                opt.step()
                sched.step()
                losses.append((step, si, loss.item()))
                writer.writerow([step, si, f"{losses[-1][2]:.6f}"])
                if step % 100 == 0:
                    fh.flush()
                    log.info("dit step %d stage %d loss %.4f", step, si, losses[-1][2])
                step += 1
            save_model(run / f"dit_stage{si}.svrt", model, mcfg)
    save_model(run / "dit.svrt", model, mcfg)
    timings["train"] = time.perf_counter() - t0
    (run / "timings.json").write_text(json.dumps(timings, indent=2))
    return TrainResult(model.eval(), vae, stats, losses, stages, run, timings)


# ---------------------------------------------------------------- evaluation


@torch.no_grad()
def restore(model: SwinMMDiT, vae: CausalVideoVAE, stats: LatentStats, lq_video, text, steps: int, seed: int):
    lq_lat, _ = vae.encode(lq_video)
    z = sample_euler(model, stats.normalize(lq_lat), text, steps, seed)
    return vae.decode(stats.denormalize(z))


@torch.no_grad()
def evaluate(
    model: SwinMMDiT, vae: CausalVideoVAE, stats: LatentStats, spec: DatasetSpec, steps: int = 20, seed: int = 0
) -> dict:
    """Held-out restoration quality; also reports the VAE's own reconstruction PSNR."""
    model.eval()
    rows = []
    for i in range(spec.n_samples):
        s = make_sample(spec, i)
        out = restore(model, vae, stats, s.lq, s.text, steps, sample_seed(seed, i))
        recon = vae.decode(vae.encode(s.hq)[0])
        rows.append(
            {
                "psnr_restored": psnr(out, s.hq),
                "psnr_degraded": psnr(s.lq, s.hq),
                "psnr_vae": psnr(recon, s.hq),
                "ssim_restored": ssim(out, s.hq),
                "ssim_degraded": ssim(s.lq, s.hq),
            }
        )
    report = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    report["n"] = len(rows)
    report["per_sample"] = rows
    return report


def holdout_spec(cfg: TrainConfig, text_dim: int) -> DatasetSpec:
    return dataset_spec(cfg, tuple(cfg.ladder[-1]), "holdout", text_dim)


def evaluate_checkpoint(ckpt, vae_path, holdout_cache, steps: int = 10, seed: int = 0) -> dict:
    """Evaluate a saved DiT on a held-out cache directory (uses its ``dataset.json``)."""
    model = load_dit(ckpt).eval()
    vae = load_vae(vae_path).eval()
    root = Path(holdout_cache)
    spec = DatasetSpec(**json.loads((root / "dataset.json").read_text()))
    stats_path = Path(ckpt).parent / "latent_stats.json"
    if stats_path.exists():
        stats = LatentStats.load(stats_path)
    else:
        c = vae.cfg.latent_channels
        stats = LatentStats([0.0] * c, [1.0] * c)
    return evaluate(model, vae, stats, spec, steps, seed)


def cache_speedup(spec: DatasetSpec, vae: CausalVideoVAE, cache_dir: str | Path, iters: int = 8, seed: int = 0) -> dict:
    """Per-iteration batch-fetch time from the cache vs synthesise-and-encode.

    Returns both timings, the ratio and whether the fetched batches matched
    bit for bit.
    """
    cached = CachedDataset(cache_dir)
    cold = ColdDataset(spec, vae)
    rng = np.random.default_rng(seed)
    batches = [rng.choice(len(cold), size=min(2, len(cold)), replace=False) for _ in range(iters)]
    out = {}
    fetched = {}
    for name, ds in (("cached", cached), ("cold", cold)):
        t0 = time.perf_counter()
        fetched[name] = [collate([ds[int(i)] for i in idx]) for idx in batches]
        out[f"{name}_sec_per_iter"] = (time.perf_counter() - t0) / iters
    out["speedup"] = out["cold_sec_per_iter"] / max(out["cached_sec_per_iter"], 1e-12)
    out["identical"] = all(
        all(torch.equal(a, b) for a, b in zip(x, y)) for x, y in zip(fetched["cached"], fetched["cold"])
    )
    return out
