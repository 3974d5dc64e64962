import json

import numpy as np
import pytest
import torch

from swinvr.data import (
    IDENTITY_RECIPE,
    CachedDataset,
    ColdDataset,
    DatasetSpec,
    DegradationRecipe,
    collate,
    degrade,
    make_sample,
    precompute_cache,
    progressive_stages,
    random_crop,
    synth_prompt,
    synth_video,
    toy_text_embed,
)
from swinvr.errors import ConfigError, ShapeError
from swinvr.metrics import psnr
from swinvr.vae import CausalVideoVAE


@pytest.fixture(scope="module")
def vae():
    torch.manual_seed(0)
    return CausalVideoVAE().eval()


def test_synth_video_determinism_and_motion():
    a, b = synth_video(3, 9, 32, 32), synth_video(3, 9, 32, 32)
    assert torch.equal(a, b)
    assert a.shape == (9, 32, 32, 3) and a.min() >= 0 and a.max() <= 1
    diffs = (a[1:] - a[:-1]).abs().mean(dim=(1, 2, 3))
    assert (diffs > 0).all() and (diffs < 0.5).all()
    img = synth_video(3, 1, 32, 32)
    assert img.shape == (1, 32, 32, 3) and torch.equal(img[0], a[0])
    assert not torch.equal(synth_video(4, 1, 32, 32), img)
    with pytest.raises(ShapeError):
        synth_video(0, 4, 32, 32)


def test_prompt_describes_scene():
    p = synth_prompt(3, 32, 32)
    assert p.startswith("moving ") and "gradient" in p


def test_identity_recipe_is_noop():
    v = synth_video(1, 5, 16, 16)
    out = degrade(v, IDENTITY_RECIPE)
    assert out.shape == v.shape
    assert (out - v).abs().max() <= 1 / 255 / 2 + 1e-6


def test_noise_only_recipe_std():
    v = torch.full((5, 32, 32, 3), 0.5)
    r = DegradationRecipe(blur_sigma=0.0, down_factor=1, noise_sigma=0.05, quant_levels=256, seed=3)
    d = degrade(v, r) - v
    assert d.std().item() == pytest.approx(0.05, rel=0.05)


def test_blur_monotone_psnr_and_range():
    v = synth_video(2, 5, 32, 32)
    values = [psnr(degrade(v, DegradationRecipe(blur_sigma=s, down_factor=1, noise_sigma=0.0, quant_levels=256)), v) for s in (0.5, 1.0, 2.0)]
    assert values[0] > values[1] > values[2]
    d = degrade(v, DegradationRecipe(noise_sigma=0.5, seed=1))
    assert d.shape == v.shape and d.min() >= 0 and d.max() <= 1


def test_recipe_validation():
    with pytest.raises(ConfigError):
        DegradationRecipe(down_factor=0)
    with pytest.raises(ConfigError):
        DegradationRecipe(noise_sigma=-1)
    with pytest.raises(ConfigError):
        DegradationRecipe(quant_levels=1)


def test_text_embed():
    a = toy_text_embed("moving red disc on gray to navy gradient", 8, 16)
    assert torch.equal(a, toy_text_embed("moving red disc on gray to navy gradient", 8, 16))
    assert torch.equal(toy_text_embed("", 8, 16), torch.zeros(8, 16))
    b = toy_text_embed("moving blue disc on gray to navy gradient", 8, 16)
    assert (a != b).any(dim=1).sum() >= 1
    corpus = {synth_prompt(s, 32, 32) for s in range(40)}
    embs = [toy_text_embed(p) for p in corpus]
    for i in range(len(embs)):
        for j in range(i + 1, len(embs)):
            assert not torch.equal(embs[i], embs[j])


def test_random_crop_not_resize():
    v = synth_video(5, 1, 48, 48)
    c = random_crop(v, 32, 32, np.random.default_rng(0))
    assert c.shape == (1, 32, 32, 3)
    # a crop is a sub-block of the source
    found = any(torch.equal(c, v[:, i : i + 32, j : j + 32]) for i in range(17) for j in range(17))
    assert found
    with pytest.raises(ShapeError):
        random_crop(v, 64, 32, np.random.default_rng(0))


SPEC = DatasetSpec(name="t", n_samples=3, frames=5, height=16, width=16, seed=9, text_dim=16, source=(24, 24))


def test_cache_manifest_and_transparency(tmp_path, vae):
    lines = precompute_cache(SPEC, vae, tmp_path / "c")
    manifest = (tmp_path / "c" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == len(manifest) == SPEC.n_samples
    first = json.loads(manifest[0])
    assert first["recipe"]["seed"] == 9 ^ 0 and first["file"] == "samples/00000.svrt"
    cached, cold = CachedDataset(tmp_path / "c"), ColdDataset(SPEC, vae)
    for idx in ([0, 2], [1], [2, 1, 0]):
        a = collate([cached[i] for i in idx])
        b = collate([cold[i] for i in idx])
        assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_rebuilt_cache_is_byte_identical(tmp_path, vae):
    precompute_cache(SPEC, vae, tmp_path / "a")
    precompute_cache(SPEC, vae, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == SPEC.n_samples + 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_entry_rebuilds_from_id(vae):
    a = make_sample(SPEC, 2)
    b = make_sample(SPEC, 2)
    assert torch.equal(a.hq, b.hq) and torch.equal(a.lq, b.lq) and a.recipe == b.recipe


def test_unwritable_directory(tmp_path, vae):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        precompute_cache(SPEC, vae, blocker / "cache")


def test_progressive_ladder():
    stages = progressive_stages((10, 20, 30))
    assert [s.frames for s in stages] == [5, 9, 21]
    assert all((s.frames - 1) % 4 == 0 for s in stages)
    for a, b in zip(stages, stages[1:]):
        assert b.frames >= a.frames and b.height >= a.height and b.width >= a.width
    assert [s.iterations for s in stages] == [10, 20, 30]
    assert (1, 96, 96) in stages[-1].sizes and (5, 32, 32) in stages[-1].sizes
    with pytest.raises(ConfigError):
        progressive_stages((1, 2))
