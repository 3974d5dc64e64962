import math

import numpy as np
import pytest
import torch

from swinvr.attention import PairCounter
from swinvr.diffusion import fm_loss
from swinvr.errors import ConfigError, DimensionError, DomainError
from swinvr.mmdit import (
    ModelConfig,
    SwinMMDiT,
    block_forward,
    dit_forward,
    load_dit,
    save_model,
    timestep_embedding,
)
from swinvr.tensor_core import grad_check
from swinvr.window_layout import Volume3, partition_regular, partition_shifted

SMALL = dict(depth=2, dim=16, heads=2, window=(1, 2, 2), latent_channels=4, text_dim=8, freq_dim=8, mlp_ratio=2)


def _randomize_gates(model, seed=0, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "_mod." in name:
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


def test_timestep_embedding_examples():
    e = timestep_embedding(0.0, 8)
    assert torch.equal(e[:4], torch.ones(4)) and torch.equal(e[4:], torch.zeros(4))
    assert torch.equal(timestep_embedding(0.37, 8), timestep_embedding(0.37, 8))
    t = 0.25
    shifted = t + 2 * math.pi * 10000.0
    assert not torch.allclose(timestep_embedding(t, 16), timestep_embedding(shifted, 16))
    with pytest.raises(ConfigError):
        timestep_embedding(0.1, 7)


def test_embedding_distinguishes_unit_interval():
    ts = torch.linspace(0, 1, 201)
    e = timestep_embedding(ts, 64)
    d = torch.cdist(e, e) + torch.eye(201) * 10
    assert d.min() > 1e-3


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(depth=3)
    with pytest.raises(ConfigError):
        ModelConfig(dim=30, heads=4)


@pytest.mark.parametrize("shape", [(2, 4, 4), (3, 5, 7), (6, 8, 8), (1, 1, 1)])
def test_output_shape_matches_input(shape):
    model = SwinMMDiT(ModelConfig(**SMALL))
    _randomize_gates(model)
    x = torch.randn(*shape, 4)
    out = dit_forward(model, x, torch.randn(*shape, 4), torch.randn(5, 8), 0.3)
    assert out.shape == x.shape


def test_deterministic():
    model = SwinMMDiT(ModelConfig(**SMALL))
    _randomize_gates(model)
    args = (torch.randn(2, 3, 5, 4), torch.randn(2, 3, 5, 4), torch.randn(3, 8), 0.7)
    assert torch.equal(model(*args), model(*args))


def test_identity_at_init_bit_exact():
    model = SwinMMDiT(ModelConfig(**SMALL))
    x, lq = torch.randn(2, 4, 4, 4), torch.randn(2, 4, 4, 4)
    out = model(x, lq, torch.randn(3, 8), 0.5)
    tokens, vol = model.patchify(torch.cat([x, lq], dim=-1)[None])
    expect = model.unpatchify(model.head(model.embed(tokens)), vol)[0]
    assert torch.equal(out, expect)


def test_block_identity_at_init():
    model = SwinMMDiT(ModelConfig(**SMALL))
    v, t = torch.randn(1, 16, 16), torch.randn(1, 3, 16)
    cond = torch.randn(1, 16)
    ov, ot = block_forward(v, t, cond, model.blocks[0], (1, 4, 4))
    assert torch.equal(ov, v) and torch.equal(ot, t)


def test_blocks_alternate_regular_and_shifted():
    model = SwinMMDiT(ModelConfig(**{**SMALL, "depth": 4}))
    model(torch.randn(3, 6, 6, 4), torch.randn(3, 6, 6, 4), torch.randn(2, 8), 0.5)
    vol = Volume3(3, 6, 6)
    for i, blk in enumerate(model.blocks):
        expect = (partition_shifted if i % 2 else partition_regular)(vol, model.cfg.window_spec)
        assert blk.last_layout is expect
        assert blk.last_layout.spec.shifted == bool(i % 2)


def test_resolution_change_scales_tokens_and_windows():
    model = SwinMMDiT(ModelConfig(**SMALL))
    n_params = sum(p.numel() for p in model.parameters())
    small, big = Volume3(2, 4, 4), Volume3(2, 8, 8)
    for vol in (small, big):
        model(torch.randn(*vol, 4), torch.randn(*vol, 4), torch.randn(2, 8), 0.1)
    assert big.numel == 4 * small.numel
    assert model.layouts(big)[0].num_windows == 4 * model.layouts(small)[0].num_windows
    assert sum(p.numel() for p in model.parameters()) == n_params


def test_errors():
    model = SwinMMDiT(ModelConfig(**SMALL))
    with pytest.raises(DimensionError):
        model(torch.randn(2, 4, 4, 4), torch.randn(2, 4, 5, 4), torch.randn(2, 8), 0.5)
    with pytest.raises(DimensionError):
        model(torch.randn(2, 4, 4, 3), torch.randn(2, 4, 4, 3), torch.randn(2, 8), 0.5)
    with pytest.raises(DomainError):
        model(torch.randn(2, 4, 4, 4), torch.randn(2, 4, 4, 4), torch.randn(2, 8), 1.5)


def test_counter_accumulates_over_blocks():
    model = SwinMMDiT(ModelConfig(**SMALL))
    c = PairCounter()
    model(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4), torch.randn(3, 8), 0.5, counter=c)
    vv = sum(int((lay.sizes**2).sum()) for lay in model.layouts((1, 4, 4)))
    assert c.video_video == vv


def test_checkpoint_round_trip(tmp_path):
    model = SwinMMDiT(ModelConfig(**SMALL))
    _randomize_gates(model)
    save_model(tmp_path / "m.svrt", model, model.cfg)
    back = load_dit(tmp_path / "m.svrt")
    args = (torch.randn(2, 3, 3, 4), torch.randn(2, 3, 3, 4), torch.randn(2, 8), 0.4)
    assert back.cfg == model.cfg
    assert torch.equal(back(*args), model(*args))


def test_block_gradient_matches_finite_differences():
    cfg = ModelConfig(depth=2, dim=6, heads=1, window=(1, 2, 2), latent_channels=2, text_dim=4, freq_dim=4, mlp_ratio=2)
    model = SwinMMDiT(cfg).double()
    _randomize_gates(model, seed=1)
    n = sum(p.numel() for p in model.parameters())
    assert n <= 5000
    g = torch.Generator().manual_seed(2)
    x0 = torch.randn(1, 2, 3, 3, 2, generator=g, dtype=torch.float64)
    lq = torch.randn(1, 2, 3, 3, 2, generator=g, dtype=torch.float64)
    text = torch.randn(1, 3, 4, generator=g, dtype=torch.float64)
    t = torch.tensor([0.4], dtype=torch.float64)
    params = [p for p in model.parameters()]
    rep = grad_check(lambda: fm_loss(model, x0, lq, text, t, seed=5), params, h=1e-5, n_coords=200, seed=0)
    # roundoff of the central difference is ~eps * |f| / h ~ 1e-11; relative error
    # is only meaningful for coordinates well above that
    assert rep.max_abs_error < 1e-9
    big = np.abs(rep.analytic) >= 1e-4
    assert big.sum() > 50
    rel = np.abs(rep.analytic - rep.numeric)[big] / np.abs(rep.analytic[big])
    assert rel.max() < 1e-6
