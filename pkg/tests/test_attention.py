import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_pair_counts, window_attention_reference
from swinvr.attention import MMAttention, PairCounter, full_mm_attention, window_mm_attention
from swinvr.errors import DimensionError
from swinvr.rope3d import RopeParams
from swinvr.window_layout import Volume3, WindowSpec, partition


def _randomize(wts, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in wts.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * 0.5)
    return wts


def test_zero_values_give_zero_output():
    wts = _randomize(MMAttention(4, 1), 0)
    with torch.no_grad():
        wts.video_qkv.weight[8:].zero_()
        wts.video_qkv.bias[8:].zero_()
        wts.text_qkv.weight[8:].zero_()
        wts.text_qkv.bias[8:].zero_()
        for lin in (wts.video_out, wts.text_out):
            lin.bias.zero_()
    v, t = full_mm_attention(torch.randn(1, 4), torch.randn(1, 4), wts)
    assert torch.equal(v, torch.zeros(1, 4)) and torch.equal(t, torch.zeros(1, 4))


def _identity_weights(d):
    wts = MMAttention(d, 1)
    with torch.no_grad():
        for lin in (wts.video_qkv, wts.text_qkv):
            lin.weight.copy_(torch.cat([torch.eye(d)] * 3))
            lin.bias.zero_()
        for lin in (wts.video_out, wts.text_out):
            lin.weight.copy_(torch.eye(d))
            lin.bias.zero_()
    return wts


def test_two_token_hand_case():
    # one video token (1, 0) and one text token (0, 1); d = 2, one head
    wts = _identity_weights(2)
    v = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    t = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    wts = wts.double()
    vo, to = full_mm_attention(v, t, wts)
    # logits: q_v.k_v = 1, q_v.k_t = 0, scaled by 1/sqrt(2)
    a = math.exp(1 / math.sqrt(2))
    p = a / (a + 1)
    assert torch.allclose(vo, torch.tensor([[p, 1 - p]], dtype=torch.float64), atol=1e-12)
    assert torch.allclose(to, torch.tensor([[1 - p, p]], dtype=torch.float64), atol=1e-12)


def test_full_attention_permutation_equivariance():
    wts = _randomize(MMAttention(8, 2), 1)
    v, t = torch.randn(7, 8), torch.randn(3, 8)
    perm = torch.randperm(7)
    a_v, a_t = full_mm_attention(v, t, wts)
    b_v, b_t = full_mm_attention(v[perm], t, wts)
    assert torch.allclose(b_v, a_v[perm], atol=1e-6)
    assert torch.allclose(b_t, a_t, atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_single_window_equals_full(seed):
    g = torch.Generator().manual_seed(seed)
    vol = tuple(int(x) for x in torch.randint(1, 5, (3,), generator=g))
    heads = int(torch.randint(1, 4, (1,), generator=g))
    d = heads * 4
    L = int(torch.randint(1, 9, (1,), generator=g))
    wts = _randomize(MMAttention(d, heads), seed)
    n = math.prod(vol)
    v, t = torch.randn(n, d, generator=g), torch.randn(L, d, generator=g)
    lay = partition(vol, WindowSpec(*vol))
    wv, wt = window_mm_attention(v, t, lay, wts)
    fv, ft = full_mm_attention(v, t, wts)
    assert (wv - fv).abs().max() < 1e-5 and (wt - ft).abs().max() < 1e-5


@pytest.mark.parametrize("rope", [False, True])
@pytest.mark.parametrize("shifted", [False, True])
def test_matches_per_window_brute_force(rope, shifted):
    d = 12
    wts = _randomize(MMAttention(d, 2), 3).double()
    lay = partition((2, 4, 3), WindowSpec(1, 2, 2, shifted))
    v = torch.randn(24, d, dtype=torch.float64)
    t = torch.randn(3, d, dtype=torch.float64)
    rp = RopeParams(6, axis_dims=(2, 2, 2)) if rope else None
    got_v, got_t = window_mm_attention(v, t, lay, wts, rope=rp)
    ref_v, ref_t = window_attention_reference(v, t, lay, wts, rope=rp)
    assert torch.allclose(got_v, ref_v, atol=1e-12)
    assert torch.allclose(got_t, ref_t, atol=1e-12)


def test_batched_matches_unbatched():
    wts = _randomize(MMAttention(12, 2), 4)
    rp = RopeParams(6)
    lay = partition((3, 5, 4), WindowSpec(2, 2, 3, True))
    v, t = torch.randn(2, 60, 12), torch.randn(2, 4, 12)
    bv, bt = window_mm_attention(v, t, lay, wts, rope=rp)
    for i in range(2):
        sv, st_ = window_mm_attention(v[i], t[i], lay, wts, rope=rp)
        assert torch.allclose(bv[i], sv, atol=1e-6) and torch.allclose(bt[i], st_, atol=1e-6)


def test_identical_windows_pool_to_single_window_text():
    wts = _randomize(MMAttention(8, 2), 5).double()
    half = torch.randn(4, 8, dtype=torch.float64)
    t = torch.randn(3, 8, dtype=torch.float64)
    # volume (1, 2, 4) split into two (1, 2, 2) windows holding the same content
    lay2 = partition((1, 2, 4), WindowSpec(1, 2, 2))
    video = torch.empty(8, 8, dtype=torch.float64)
    for w in lay2.windows:
        video[torch.from_numpy(w.indices.astype(np.int64))] = half
    _, t_two = window_mm_attention(video, t, lay2, wts)
    _, t_one = window_mm_attention(half, t, partition((1, 2, 2), WindowSpec(1, 2, 2)), wts)
    assert torch.allclose(t_two, t_one, atol=1e-12)


def test_value_scaling_is_linear():
    lay = partition((2, 3, 3), WindowSpec(1, 2, 2, True))
    v, t = torch.randn(18, 8, dtype=torch.float64), torch.randn(2, 8, dtype=torch.float64)

    def weights(c):
        wts = _randomize(MMAttention(8, 2), 6).double()
        with torch.no_grad():
            for lin in (wts.video_qkv, wts.text_qkv):
                lin.weight[16:] *= c
                lin.bias[16:] *= c
            wts.video_out.bias.zero_()
            wts.text_out.bias.zero_()
        return wts

    u_v, u_t = window_mm_attention(v, t, lay, weights(1.0))
    s_v, s_t = window_mm_attention(v, t, lay, weights(2.5))
    assert torch.allclose(s_v, 2.5 * u_v, atol=1e-6) and torch.allclose(s_t, 2.5 * u_t, atol=1e-6)


@pytest.mark.parametrize("rope", [None, RopeParams(8)])
def test_window_locality_bit_exact(rope):
    wts = _randomize(MMAttention(16, 2), 7)
    lay = partition((2, 4, 4), WindowSpec(2, 2, 2))
    v, t = torch.randn(32, 16), torch.randn(3, 16)
    base_v, base_t = window_mm_attention(v, t, lay, wts, rope=rope)
    target = lay.windows[1]
    v2 = v.clone()
    v2[int(target.indices[0])] += 3.0
    new_v, new_t = window_mm_attention(v2, t, lay, wts, rope=rope)
    inside = torch.zeros(32, dtype=torch.bool)
    inside[torch.from_numpy(target.indices.astype(np.int64))] = True
    assert torch.equal(new_v[~inside], base_v[~inside])
    assert not torch.equal(new_v[inside], base_v[inside])
    assert not torch.equal(new_t, base_t)


@given(
    st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
    st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
    st.booleans(),
    st.integers(1, 5),
)
def test_counter_matches_enumeration(vol, ext, shifted, L):
    lay = partition(vol, WindowSpec(*ext, shifted))
    wts = MMAttention(4, 1)
    c = PairCounter()
    with torch.no_grad():
        window_mm_attention(torch.randn(math.prod(vol), 4), torch.randn(L, 4), lay, wts, counter=c)
    vv, vt, tq = brute_pair_counts(lay, L)
    assert (c.video_video, c.video_text, c.text_query) == (vv, vt, tq)
    assert c.video_query == sum(n * (n + L) for n in lay.sizes.tolist())


def test_full_counter_and_errors():
    wts = MMAttention(4, 2)
    c = PairCounter()
    full_mm_attention(torch.randn(5, 4), torch.randn(2, 4), wts, counter=c)
    assert c.total == 7 * 7
    lay = partition((1, 2, 2), WindowSpec(1, 1, 1))
    with pytest.raises(DimensionError):
        window_mm_attention(torch.randn(5, 4), torch.randn(2, 4), lay, wts)
    with pytest.raises(DimensionError):
        full_mm_attention(torch.randn(5, 3), torch.randn(2, 4), wts)
    with pytest.raises(DimensionError):
        full_mm_attention(torch.randn(5, 4), torch.randn(0, 4), wts)
