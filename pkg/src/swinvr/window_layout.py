"""Regular and half-shifted 3D window partitions with variable-size boundary windows.

Windows never wrap around and nothing is masked: a window clipped by the
volume edge is simply smaller. Token indices refer to the row-major flattening
``t * H * W + h * W + w`` of a ``(T, H, W)`` latent volume.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterator, NamedTuple

import numpy as np
import torch

from .errors import ConfigError, DimensionError


class Volume3(NamedTuple):
    T: int
    H: int
    W: int

    @property
    def numel(self) -> int:
        return self.T * self.H * self.W


@dataclass(frozen=True)
class WindowSpec:
    t: int
    h: int
    w: int
    shifted: bool = False

    def __post_init__(self):
        if min(self.t, self.h, self.w) < 1:
            raise ConfigError(f"window extents must be >= 1, got {(self.t, self.h, self.w)}")

    @property
    def extent(self) -> tuple[int, int, int]:
        return (self.t, self.h, self.w)

    def with_shift(self, shifted: bool) -> WindowSpec:
        return WindowSpec(self.t, self.h, self.w, shifted)


@dataclass(frozen=True)
class Window:
    origin: tuple[int, int, int]
    extent: tuple[int, int, int]
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def local_positions(self) -> np.ndarray:
        """Window-local ``(t, h, w)`` coordinates of each token, in index order."""
        dt, dh, dw = self.extent
        g = np.stack(np.meshgrid(np.arange(dt), np.arange(dh), np.arange(dw), indexing="ij"), axis=-1)
        return g.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class WindowLayout:
    volume: Volume3
    spec: WindowSpec
    windows: tuple[Window, ...]
    offsets: np.ndarray  # cumulative token counts, len(windows) + 1

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def permutation(self) -> np.ndarray:
        """Flattened indices in packed order (window after window)."""
        perm = np.concatenate([w.indices for w in self.windows])
        perm.setflags(write=False)
        return perm

    @cached_property
    def inverse_permutation(self) -> np.ndarray:
        perm = self.permutation
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return inv

    @cached_property
    def permutation_tensor(self) -> torch.Tensor:
        return torch.from_numpy(np.array(self.permutation, dtype=np.int64))

    @cached_property
    def inverse_tensor(self) -> torch.Tensor:
        return torch.from_numpy(np.array(self.inverse_permutation, dtype=np.int64))

    @cached_property
    def size_groups(self) -> list[tuple[int, np.ndarray]]:
        """Window ids grouped by token count, ``[(n, window_ids), ...]`` sorted by n."""
        sizes = self.sizes
        return [(int(n), np.flatnonzero(sizes == n)) for n in np.unique(sizes)]


def flatten_index(pos: tuple[int, int, int], volume: Volume3) -> int:
    t, h, w = pos
    T, H, W = volume
    if not (0 <= t < T and 0 <= h < H and 0 <= w < W):
        raise IndexError(f"position {pos} outside volume {tuple(volume)}")
    return t * H * W + h * W + w


def axis_segments(size: int, window: int, shifted: bool) -> list[tuple[int, int]]:
    """Per-axis ``[start, stop)`` segments.

    Regular: cuts at 0, w, 2w, ... Shifted: cuts at 0, s, s + w, s + 2w, ...
    with ``s = window // 2``; the first and last segments may be short.
    """
    shift = window // 2 if shifted else 0
    cuts = [0]
    c = shift if shift > 0 else window
    while c < size:
        cuts.append(c)
        c += window
    cuts.append(size)
    return list(zip(cuts[:-1], cuts[1:]))


@lru_cache(maxsize=256)
def _partition(volume: Volume3, spec: WindowSpec) -> WindowLayout:
    T, H, W = volume
    if min(T, H, W) < 1:
        raise ConfigError(f"volume extents must be >= 1, got {tuple(volume)}")
    grid = np.arange(T * H * W).reshape(T, H, W)
    windows = []
    for t0, t1 in axis_segments(T, spec.t, spec.shifted):
        for h0, h1 in axis_segments(H, spec.h, spec.shifted):
            for w0, w1 in axis_segments(W, spec.w, spec.shifted):
                idx = grid[t0:t1, h0:h1, w0:w1].reshape(-1)
                idx.setflags(write=False)
                windows.append(Window((t0, h0, w0), (t1 - t0, h1 - h0, w1 - w0), idx))
    offsets = np.concatenate([[0], np.cumsum([w.size for w in windows])])
    return WindowLayout(Volume3(T, H, W), spec, tuple(windows), offsets)


def partition(volume: Volume3 | tuple[int, int, int], spec: WindowSpec) -> WindowLayout:
    return _partition(Volume3(*volume), spec)


def partition_regular(volume, spec: WindowSpec) -> WindowLayout:
    return partition(volume, spec.with_shift(False))


def partition_shifted(volume, spec: WindowSpec) -> WindowLayout:
    return partition(volume, spec.with_shift(True))


@dataclass
class PackedBatch:
    data: torch.Tensor  # rows grouped window by window
    offsets: np.ndarray  # cu_seqlens-style, len(windows) + 1

    def segment(self, i: int) -> torch.Tensor:
        return self.data[int(self.offsets[i]) : int(self.offsets[i + 1])]


def pack_windows(layout: WindowLayout, x: torch.Tensor) -> PackedBatch:
    n = layout.volume.numel
    if x.dim() < 1 or x.shape[0] != n:
        raise DimensionError(f"expected {n} rows for volume {tuple(layout.volume)}, got shape {tuple(x.shape)}")
    return PackedBatch(x.index_select(0, layout.permutation_tensor), layout.offsets.copy())


def unpack_windows(layout: WindowLayout, packed: PackedBatch) -> torch.Tensor:
    n = layout.volume.numel
    data = packed.data
    if data.dim() < 1 or data.shape[0] != n or not np.array_equal(packed.offsets, layout.offsets):
        raise DimensionError(f"packed batch of {data.shape[0] if data.dim() else 0} rows does not match layout ({n} tokens)")
    return data.index_select(0, layout.inverse_tensor)


def iter_csv_rows(layout: WindowLayout) -> Iterator[dict]:
    vol = "x".join(map(str, layout.volume))
    spec = "x".join(map(str, layout.spec.extent))
    for i, w in enumerate(layout.windows):
        yield {
            "volume": vol,
            "spec": spec,
            "shifted": int(layout.spec.shifted),
            "window_index": i,
            "origin": "x".join(map(str, w.origin)),
            "extent": "x".join(map(str, w.extent)),
            "token_count": w.size,
        }


LAYOUT_CSV_COLUMNS = ["volume", "spec", "shifted", "window_index", "origin", "extent", "token_count"]


def layouts_to_csv(layouts) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LAYOUT_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for layout in layouts:
        writer.writerows(iter_csv_rows(layout))
    return buf.getvalue()
