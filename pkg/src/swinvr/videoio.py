"""Videos on disk: binary PPM (P6) frames ``frame_%05d.ppm`` plus ``video.json``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ShapeError

META_NAME = "video.json"


def write_ppm(path: Path, frame: np.ndarray) -> None:
    h, w, _ = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())


def _tokens(data: bytes, count: int):
    # header tokens split on whitespace with '#' comments; returns tokens and payload offset
    out, i = [], 0
    while len(out) < count:
        while data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while data[i : i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not data[j : j + 1].isspace():
            j += 1
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_ppm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ShapeError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(w), int(h)
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return arr.reshape(h, w, 3)


def write_video_dir(directory: str | Path, video: torch.Tensor, fps: float = 8.0) -> Path:
    """Quantise a ``(T, H, W, 3)`` video in [0, 1] to 8 bits and write it out."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frames = np.clip(np.rint(video.detach().cpu().numpy() * 255.0), 0, 255).astype(np.uint8)
    t, h, w, _ = frames.shape
    for i in range(t):
        write_ppm(d / f"frame_{i:05d}.ppm", frames[i])
    meta = {"frames": t, "height": h, "width": w, "fps": fps}
    (d / META_NAME).write_text(json.dumps(meta, sort_keys=True))
    return d


def read_video_dir(directory: str | Path) -> tuple[torch.Tensor, dict]:
    d = Path(directory)
    meta = json.loads((d / META_NAME).read_text())
    frames = [read_ppm(d / f"frame_{i:05d}.ppm") for i in range(meta["frames"])]
    arr = np.stack(frames).astype(np.float32) / 255.0
    if arr.shape[1:3] != (meta["height"], meta["width"]):
        raise ShapeError(f"frame size {arr.shape[1:3]} disagrees with sidecar {meta['height']}x{meta['width']}")
    return torch.from_numpy(arr), meta
