"""A few-minute pass through the whole pipeline at reduced size.

Trains a small VAE, caches latents, runs the three-stage progressive
schedule, then restores one held-out clip and writes LQ / restored / HQ
frames as PPM. The full-size run is ``train-dit --config configs/toy_e2e.json``.

    python3 demos/toy_restoration.py [out_dir]
"""

import sys
from pathlib import Path

import torch

from swinvr.data import make_sample
from swinvr.experiment import TrainConfig, holdout_spec, restore, smoothed_endpoints, train_dit
from swinvr.metrics import psnr
from swinvr.videoio import write_video_dir

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
cfg = TrainConfig(
    model={"depth": 2, "dim": 32, "heads": 2, "window": (2, 4, 4), "text_dim": 32},
    vae_train={"steps": 300, "n_sources": 16},
    stage_iterations=(200, 120, 60),
    ladder=((5, 32, 32), (9, 32, 32), (21, 32, 32)),
    n_train=16,
    n_holdout=2,
)
res = train_dit(cfg, out)
for i in range(len(res.stages)):
    start, end = smoothed_endpoints(res.stage_losses(i))
    print(f"stage {i} {res.stages[i].frames} frames: smoothed loss {start:.3f} -> {end:.3f}")

sample = make_sample(holdout_spec(cfg, res.model.cfg.text_dim), 0)
restored = restore(res.model, res.vae, res.stats, sample.lq, sample.text, steps=10, seed=0)
print(f"held-out clip: degraded {psnr(sample.lq, sample.hq):.2f} dB, restored {psnr(restored, sample.hq):.2f} dB")
for name, video in (("lq", sample.lq), ("restored", restored), ("hq", sample.hq)):
    write_video_dir(out / "frames" / name, torch.clamp(video, 0, 1))
print(f"frames under {out / 'frames'}")
