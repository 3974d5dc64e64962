"""Regular vs half-shifted 3D windows over a video token volume.

Prints the window grid of both partitions, what each costs in attention
pairs, and checks that one volume-covering window reproduces full attention.

    python3 demos/window_layouts.py
"""

import torch

from swinvr import MMAttention, WindowSpec, full_mm_attention, partition, window_mm_attention
from swinvr.metrics import attention_pair_count


def show(layout):
    print(f"{layout.spec}: {layout.num_windows} windows, sizes {sorted(set(layout.sizes.tolist()))}")
    for win in layout.windows[:6]:
        print(f"  origin {win.origin} extent {win.extent}")
    if layout.num_windows > 6:
        print(f"  ... {layout.num_windows - 6} more")


volume = (5, 8, 8)
spec = WindowSpec(2, 4, 4)
regular, shifted = partition(volume, spec), partition(volume, spec.with_shift(True))
show(regular)
show(shifted)  # boundary windows are kept, not masked

# a token that shares a window with different neighbours in the two layouts
token = 2 * 64 + 3 * 8 + 3
for lay in (regular, shifted):
    wid = next(i for i, w in enumerate(lay.windows) if token in w.indices)
    print(f"token {token} sits in window {wid} of the {'shifted' if lay.spec.shifted else 'regular'} layout")

print("\npairs per head, L = 16 text tokens")
for s in (1, 2, 4, 8):
    rep = attention_pair_count(volume, WindowSpec(1, s, s), False, 16)
    print(f"  window 1x{s}x{s}: {rep.total_pairs:>8d} windowed vs {rep.full_pairs} full")

torch.manual_seed(0)
wts = MMAttention(32, 4)
video, text = torch.randn(5 * 8 * 8, 32), torch.randn(16, 32)
with torch.no_grad():
    fv, ft = full_mm_attention(video, text, wts)
    wv, wt = window_mm_attention(video, text, partition(volume, WindowSpec(*volume)), wts)
print(f"\none covering window vs full attention: max |diff| {(fv - wv).abs().max().item():.2e}")
