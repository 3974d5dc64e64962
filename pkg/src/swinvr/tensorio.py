"""Binary tensor records and named-tensor containers.

Record layout (all integers little-endian)::

    b"SVRT" | u32 version=1 | u32 name_len | name (UTF-8)
    | u8 dtype (0=float32, 1=float64) | u32 rank | u64 dims[rank]
    | payload (little-endian scalars, row-major)

A container file is a u32 record count followed by that many records.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np
import torch

MAGIC = b"SVRT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {torch.float32: 0, torch.float64: 1}


class FormatError(ValueError):
    """The byte stream is not a valid tensor record."""


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated record: wanted {n} bytes, got {len(buf)}")
    return buf


def write_record(fh: BinaryIO, name: str, tensor: torch.Tensor) -> None:
    if tensor.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {tensor.dtype}")
    code = _CODES[tensor.dtype]
    raw = name.encode("utf-8")
    arr = np.asarray(tensor.detach().cpu().numpy(), dtype=_DTYPES[code]).copy(order="C")  # keeps rank 0
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<BI", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_record(fh: BinaryIO) -> tuple[str, torch.Tensor]:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad magic")
    version, name_len = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    name = _read_exact(fh, name_len).decode("utf-8")
    code, rank = struct.unpack("<BI", _read_exact(fh, 5))
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    dt = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    arr = np.frombuffer(_read_exact(fh, count * dt.itemsize), dtype=dt).reshape(dims)
    return name, torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True))


def dumps(tensors: Mapping[str, torch.Tensor]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        write_record(buf, name, t)
    return buf.getvalue()


def loads(data: bytes) -> dict[str, torch.Tensor]:
    fh = io.BytesIO(data)
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out = {}
    for _ in range(count):
        name, t = read_record(fh)
        out[name] = t
    if fh.read(1):
        raise FormatError("trailing bytes after last record")
    return out


def save_tensors(path: str | Path, tensors: Mapping[str, torch.Tensor]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load_tensors(path: str | Path) -> dict[str, torch.Tensor]:
    return loads(Path(path).read_bytes())
