"""Versioned binary checkpoints with bitwise round-trip.

Layout (all integers little-endian)::

    magic   4s  = "C2M1"
    version u32 = 1
    cfg_len u32, cfg_len bytes   key=value TrainConfig snapshot (utf-8)
    step    u64
    rng_len u32, rng_len bytes   opaque RNG blob
    count   u32                  number of named tensors
    count * [ name_len u16, name utf-8,
              dtype u8 (0=f32, 1=f64, 2=i64),
              ndim u8, ndim * dim u32,
              payload bytes ]
    sentinel u32 = 0xC2C2C2C2

Tensor names carry their role as a prefix: ``model/<param>``,
``optg/<param>/<slot>``, ``optd/<param>/<slot>`` with slots
``exp_avg``, ``exp_avg_sq``, ``step``.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

from .config import TrainConfig, dump_config, parse_config
from .errors import CheckpointCorruptError, CheckpointFormatError

MAGIC = b"C2M1"
VERSION = 1
SENTINEL = 0xC2C2C2C2

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {torch.float32: 0, torch.float64: 1, torch.int64: 2}


def write_checkpoint(
    path,
    config: TrainConfig,
    step: int,
    tensors: Dict[str, torch.Tensor],
    rng_blob: bytes = b"",
) -> None:
    cfg_bytes = dump_config(config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", MAGIC, VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<I", len(rng_blob)))
        fh.write(rng_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            t = tensors[name].detach().contiguous()
            code = _DTYPE_CODES.get(t.dtype)
            if code is None:
                raise ValueError(f"unsupported dtype {t.dtype} for tensor {name}")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", code, t.dim()))
            for d in t.shape:
                fh.write(struct.pack("<I", d))
            fh.write(t.numpy().astype(_DTYPES[code], copy=False).tobytes())
        fh.write(struct.pack("<I", SENTINEL))


def _read(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointCorruptError(f"truncated checkpoint while reading {what}")
    return data


def read_checkpoint(path) -> Tuple[TrainConfig, int, Dict[str, torch.Tensor], bytes]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic, version = struct.unpack("<4sI", _read(fh, 8, "header"))
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported version {version}")
        (cfg_len,) = struct.unpack("<I", _read(fh, 4, "config length"))
        config = parse_config(_read(fh, cfg_len, "config").decode("utf-8"))
        (step,) = struct.unpack("<Q", _read(fh, 8, "step"))
        (rng_len,) = struct.unpack("<I", _read(fh, 4, "rng length"))
        rng_blob = _read(fh, rng_len, "rng blob")
        (count,) = struct.unpack("<I", _read(fh, 4, "tensor count"))
        tensors: Dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read(fh, 2, "dtype/ndim"))
            if code not in _DTYPES:
                raise CheckpointFormatError(f"unknown dtype code {code}")
            shape = [
                struct.unpack("<I", _read(fh, 4, "dim"))[0] for _ in range(ndim)
            ]
            numel = int(np.prod(shape)) if shape else 1
            payload = _read(fh, numel * _DTYPES[code].itemsize, f"tensor {name}")
            arr = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape).copy()
            tensors[name] = torch.from_numpy(arr)
        (sentinel,) = struct.unpack("<I", _read(fh, 4, "sentinel"))
        if sentinel != SENTINEL:
            raise CheckpointCorruptError("sentinel mismatch")
    return config, step, tensors, rng_blob
