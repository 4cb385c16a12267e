"""Flat binary container for named float32 tensors.

Layout (all little-endian): magic ``EQAW``, u32 version (1), u32 tensor
count, then per tensor: u16 name length, UTF-8 name bytes, u8 ndim,
ndim x u32 dims, and the row-major f32 payload. Insertion order is
preserved on round trip. Used for model checkpoints and cached feature
banks.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"EQAW"
_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d shapes
            if arr.ndim > 255:
                raise ValueError(f"{name}: too many dimensions")
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name[:40]}...")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an EQAW tensor file")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported EQAW version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4")
            if len(data) != n:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            out[name] = data.reshape(dims).astype(np.float32)
    return out
