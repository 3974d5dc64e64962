"""Synthetic HQ videos, HQ->LQ degradation, toy text embeddings and the latent cache.

Everything is a pure function of seeds: a cache entry can be rebuilt from
its sample id, recipe and dataset seed, and rebuilding writes identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from . import tensorio
from .diffusion import sample_seed
from .errors import ConfigError, ShapeError
from .vae import CausalVideoVAE

PALETTE = {
    "red": (0.86, 0.18, 0.16),
    "green": (0.20, 0.70, 0.28),
    "blue": (0.18, 0.32, 0.86),
    "yellow": (0.94, 0.84, 0.22),
    "purple": (0.56, 0.26, 0.74),
    "orange": (0.96, 0.56, 0.14),
    "cyan": (0.20, 0.78, 0.84),
    "white": (0.94, 0.94, 0.92),
}
BACKGROUNDS = {
    "gray": (0.45, 0.45, 0.47),
    "navy": (0.10, 0.14, 0.32),
    "teal": (0.12, 0.40, 0.42),
    "sand": (0.76, 0.68, 0.52),
    "black": (0.06, 0.06, 0.07),
}


def check_video_dims(t: int, h: int, w: int) -> None:
    if t < 1 or (t - 1) % 4:
        raise ShapeError(f"frame count {t} violates T = 1 (mod 4)")
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ShapeError(f"spatial size {h}x{w} violates H, W = 0 (mod 8)")


@dataclass
class SceneObject:
    kind: str  # "rect" | "disc"
    color: str
    center: np.ndarray  # (y, x) at frame 0, pixels
    size: np.ndarray  # (half_h, half_w) for rect, (r, r) for disc
    velocity: np.ndarray  # pixels per frame


@dataclass
class Scene:
    height: int
    width: int
    bg_from: str
    bg_to: str
    bg_angle: float
    objects: list[SceneObject] = field(default_factory=list)

    def describe(self) -> str:
        shapes = " and ".join(f"{o.color} {'rectangle' if o.kind == 'rect' else 'disc'}" for o in self.objects)
        return f"moving {shapes} on {self.bg_from} to {self.bg_to} gradient"

    def _centers(self, t: int, obj: SceneObject) -> np.ndarray:
        # bounce inside the frame: reflect the free trajectory into [lo, hi]
        lo = obj.size
        hi = np.array([self.height, self.width], dtype=np.float64) - obj.size
        span = np.maximum(hi - lo, 1e-6)
        p = obj.center + obj.velocity * t - lo
        p = np.mod(p, 2 * span)
        p = np.where(p > span, 2 * span - p, p)
        return lo + p

    def render(self, frames: int) -> np.ndarray:
        h, w = self.height, self.width
        yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
        u = (np.cos(self.bg_angle) * (yy / h - 0.5) + np.sin(self.bg_angle) * (xx / w - 0.5)) / math.sqrt(0.5) + 0.5
        u = np.clip(u, 0.0, 1.0)[..., None]
        bg = (1 - u) * np.array(BACKGROUNDS[self.bg_from]) + u * np.array(BACKGROUNDS[self.bg_to])
        out = np.empty((frames, h, w, 3), dtype=np.float64)
        for t in range(frames):
            img = bg.copy()
            for obj in self.objects:
                cy, cx = self._centers(t, obj)
                if obj.kind == "disc":
                    sd = np.hypot(yy - cy, xx - cx) - obj.size[0]
                else:
                    dy = np.abs(yy - cy) - obj.size[0]
                    dx = np.abs(xx - cx) - obj.size[1]
                    sd = np.maximum(dy, dx)
                alpha = np.clip(0.5 - sd, 0.0, 1.0)[..., None]  # one-pixel anti-aliased edge
                img = (1 - alpha) * img + alpha * np.array(PALETTE[obj.color])
            out[t] = img
        return out.astype(np.float32)


def make_scene(seed: int, height: int, width: int) -> Scene:
    rng = np.random.default_rng(seed)
    bgs = list(BACKGROUNDS)
    b0, b1 = rng.choice(len(bgs), size=2, replace=False)
    scene = Scene(height, width, bgs[b0], bgs[b1], float(rng.uniform(0, 2 * math.pi)))
    s = float(min(height, width))
    colors = list(PALETTE)
    for k in rng.choice(len(colors), size=int(rng.integers(1, 4)), replace=False):
        kind = "disc" if rng.random() < 0.5 else "rect"
        if kind == "disc":
            r = rng.uniform(0.08, 0.2) * s
            size = np.array([r, r])
        else:
            size = rng.uniform(0.06, 0.22, size=2) * s
        center = np.array([rng.uniform(0, height), rng.uniform(0, width)])
        speed = rng.uniform(0.01, 0.04) * s
        ang = rng.uniform(0, 2 * math.pi)
        velocity = speed * np.array([math.sin(ang), math.cos(ang)])
        scene.objects.append(SceneObject(kind, colors[k], center, size, velocity))
    return scene


def synth_video(seed: int, frames: int, height: int, width: int) -> torch.Tensor:
    """Procedural ``(T, H, W, 3)`` clip: bouncing shapes over a smooth gradient."""
    check_video_dims(frames, height, width)
    return torch.from_numpy(make_scene(seed, height, width).render(frames))


def synth_prompt(seed: int, height: int, width: int) -> str:
    return make_scene(seed, height, width).describe()


def center_crop(video: torch.Tensor, height: int, width: int) -> torch.Tensor:
    h, w = video.shape[-3:-1]
    top, left = (h - height) // 2, (w - width) // 2
    return video[..., top : top + height, left : left + width, :]


def random_crop(video: torch.Tensor, height: int, width: int, rng: np.random.Generator) -> torch.Tensor:
    h, w = video.shape[-3:-1]
    if height > h or width > w:
        raise ShapeError(f"crop {height}x{width} larger than source {h}x{w}")
    top = int(rng.integers(0, h - height + 1))
    left = int(rng.integers(0, w - width + 1))
    return video[..., top : top + height, left : left + width, :]


@dataclass(frozen=True)
class DegradationRecipe:
    """blur -> box downscale -> bilinear upscale -> Gaussian noise -> posterise."""

    blur_sigma: float = 1.0
    down_factor: int = 2
    noise_sigma: float = 0.1
    quant_levels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.down_factor < 1:
            raise ConfigError(f"down_factor must be >= 1, got {self.down_factor}")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ConfigError("noise_sigma and blur_sigma must be >= 0")
        if self.quant_levels < 2:
            raise ConfigError(f"quant_levels must be >= 2, got {self.quant_levels}")


IDENTITY_RECIPE = DegradationRecipe(blur_sigma=0.0, down_factor=1, noise_sigma=0.0, quant_levels=256)


def degrade(video: torch.Tensor, recipe: DegradationRecipe) -> torch.Tensor:
    """Corrupt a ``(T, H, W, 3)`` clip; the output keeps the input's size and stays in [0, 1]."""
    x = video.detach().cpu().numpy().astype(np.float64)
    t, h, w, _ = x.shape
    if recipe.blur_sigma > 0:
        x = gaussian_filter(x, sigma=(0, recipe.blur_sigma, recipe.blur_sigma, 0), mode="reflect", truncate=3.0)
    f = recipe.down_factor
    if f > 1:
        if h % f or w % f:
            raise ConfigError(f"size {h}x{w} not divisible by down_factor {f}")
        small = x.reshape(t, h // f, f, w // f, f, 3).mean(axis=(2, 4))
        up = F.interpolate(
            torch.from_numpy(small).permute(0, 3, 1, 2), size=(h, w), mode="bilinear", align_corners=False
        )
        x = up.permute(0, 2, 3, 1).numpy()
    if recipe.noise_sigma > 0:
        rng = np.random.default_rng(recipe.seed)
        x = x + rng.normal(0.0, recipe.noise_sigma, size=x.shape)
    x = np.clip(x, 0.0, 1.0)
    q = recipe.quant_levels - 1
    x = np.rint(x * q) / q
    return torch.from_numpy(x.astype(np.float32))


def _token_seed(token: str, salt: int) -> int:
    digest = hashlib.blake2b(f"{salt}|{token}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def toy_text_embed(prompt: str, length: int = 8, dim: int = 64, seed_salt: int = 0) -> torch.Tensor:
    """Hash-seeded stand-in for a frozen text encoder; empty prompt gives the zero (null) embedding."""
    if length < 1:
        raise ConfigError(f"text length must be >= 1, got {length}")
    out = np.zeros((length, dim), dtype=np.float32)
    for i, tok in enumerate(prompt.lower().split()[:length]):
        out[i] = np.random.default_rng(_token_seed(tok, seed_salt)).standard_normal(dim)
    return torch.from_numpy(out)


@dataclass
class DatasetSpec:
    """A seeded synthetic dataset; ``source`` > target size means random crops."""

    name: str
    n_samples: int
    frames: int
    height: int
    width: int
    seed: int = 0
    recipe: DegradationRecipe = DegradationRecipe()
    text_len: int = 8
    text_dim: int = 64
    source: tuple[int, int] | None = None

    def __post_init__(self):
        if isinstance(self.recipe, dict):
            self.recipe = DegradationRecipe(**self.recipe)
        if self.source is not None:
            self.source = tuple(self.source)
        check_video_dims(self.frames, self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    index: int
    hq: torch.Tensor
    lq: torch.Tensor
    text: torch.Tensor
    prompt: str
    recipe: DegradationRecipe


def make_sample(spec: DatasetSpec, index: int) -> Sample:
    seed = sample_seed(spec.seed, index)
    sh, sw = spec.source or (spec.height, spec.width)
    hq = synth_video(seed, spec.frames, sh, sw)
    if (sh, sw) != (spec.height, spec.width):
        hq = random_crop(hq, spec.height, spec.width, np.random.default_rng(seed + 1))
    hq = hq.contiguous()
    prompt = synth_prompt(seed, sh, sw)
    recipe = replace(spec.recipe, seed=seed)
    lq = degrade(hq, recipe)
    text = toy_text_embed(prompt, spec.text_len, spec.text_dim)
    return Sample(index, hq, lq, text, prompt, recipe)


@dataclass
class CacheEntry:
    index: int
    hq_latent: torch.Tensor
    lq_latent: torch.Tensor
    text: torch.Tensor
    recipe: DegradationRecipe

    def __post_init__(self):
        if self.hq_latent is None or self.lq_latent is None or self.text is None:
            raise ValueError(f"cache entry {self.index} is incomplete")


@torch.no_grad()
def encode_sample(sample: Sample, vae: CausalVideoVAE) -> CacheEntry:
    hq_mean, _ = vae.encode(sample.hq)
    lq_mean, _ = vae.encode(sample.lq)
    return CacheEntry(sample.index, hq_mean, lq_mean, sample.text, sample.recipe)


MANIFEST = "manifest.jsonl"


def precompute_cache(spec: DatasetSpec, vae: CausalVideoVAE, out_dir: str | Path) -> list[dict]:
    """Encode every sample once and write tensor containers plus a JSON-lines manifest."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(spec.n_samples):
        sample = make_sample(spec, i)
        entry = encode_sample(sample, vae)
        rel = f"samples/{i:05d}.svrt"
        tensorio.save_tensors(
            out / rel, {"hq_latent": entry.hq_latent, "lq_latent": entry.lq_latent, "text": entry.text}
        )
        lines.append(
            {
                "id": i,
                "file": rel,
                "frames": spec.frames,
                "height": spec.height,
                "width": spec.width,
                "prompt": sample.prompt,
                "recipe": asdict(entry.recipe),
            }
        )
    (out / MANIFEST).write_text("".join(json.dumps(l, sort_keys=True) + "\n" for l in lines))
    (out / "dataset.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2))
    return lines


class CachedDataset:
    """Reads precomputed entries; never touches the VAE or the text embedder."""

    def __init__(self, cache_dir: str | Path):
        self.root = Path(cache_dir)
        self.manifest = [json.loads(l) for l in (self.root / MANIFEST).read_text().splitlines() if l]
        self._mem: dict[int, CacheEntry] = {}

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, i: int) -> CacheEntry:
        if i not in self._mem:
            m = self.manifest[i]
            t = tensorio.load_tensors(self.root / m["file"])
            self._mem[i] = CacheEntry(m["id"], t["hq_latent"], t["lq_latent"], t["text"], DegradationRecipe(**m["recipe"]))
        return self._mem[i]


class ColdDataset:
    """Same interface as :class:`CachedDataset` but synthesises and encodes on every access."""

    def __init__(self, spec: DatasetSpec, vae: CausalVideoVAE):
        self.spec = spec
        self.vae = vae

    def __len__(self):
        return self.spec.n_samples

    def __getitem__(self, i: int) -> CacheEntry:
        return encode_sample(make_sample(self.spec, i), self.vae)


def collate(entries: Sequence[CacheEntry]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        torch.stack([e.hq_latent for e in entries]),
        torch.stack([e.lq_latent for e in entries]),
        torch.stack([e.text for e in entries]),
    )


@dataclass(frozen=True)
class ProgressiveStage:
    frames: int
    height: int
    width: int
    iterations: int
    mix: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        check_video_dims(self.frames, self.height, self.width)

    @property
    def sizes(self) -> tuple[tuple[int, int, int], ...]:
        return self.mix or ((self.frames, self.height, self.width),)


TOY_LADDER = ((5, 32, 32), (9, 64, 64), (21, 96, 96))


def progressive_stages(
    iterations: Sequence[int] = (600, 400, 300),
    ladder: Sequence[tuple[int, int, int]] = TOY_LADDER,
    final_mix: bool = True,
) -> list[ProgressiveStage]:
    """Length/resolution curriculum; the last stage mixes all sizes plus single images."""
    if len(iterations) != len(ladder):
        raise ConfigError(f"{len(iterations)} iteration budgets for {len(ladder)} stages")
    stages = []
    for i, ((t, h, w), n) in enumerate(zip(ladder, iterations)):
        mix = ()
        if final_mix and i == len(ladder) - 1:
            mix = tuple(ladder) + ((1, h, w),)
        stages.append(ProgressiveStage(t, h, w, int(n), mix))
    for a, b in zip(stages, stages[1:]):
        if b.frames < a.frames or b.height < a.height or b.width < a.width:
            raise ConfigError("stages must be non-decreasing in every dimension")
    return stages
