"""TMRN checkpoint container.

Layout (little-endian)::

    b"TMRN" | u32 version | u32 config_len | config text (UTF-8, key = value)
    u32 n_params
    per parameter: u32 name_len | name | u32 rank | rank * u32 extents | f64 payload
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .blocks import TmrnParams, init_params, named_parameters
from .config import TmrnConfig

MAGIC = b"TMRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(config: TmrnConfig, params: TmrnParams | dict[str, np.ndarray]) -> bytes:
    arrays = params if isinstance(params, dict) else {k: t.data for k, t in named_parameters(params).items()}
    buf = io.BytesIO()
    cfg = config.to_text().encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_checkpoint(blob: bytes) -> tuple[TmrnConfig, TmrnParams]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint at offset {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError("not a TMRN checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = TmrnConfig.from_text(take(cfg_len).decode("utf-8")).validate()
    params = init_params(config)
    named = named_parameters(params)
    (count,) = struct.unpack("<I", take(4))
    if count != len(named):
        raise CheckpointError(f"checkpoint has {count} tensors, config implies {len(named)}")
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        if name not in named:
            raise CheckpointError(f"unexpected parameter {name!r}")
        if tuple(shape) != named[name].shape:
            raise CheckpointError(f"{name}: stored shape {shape} != expected {named[name].shape}")
        size = int(np.prod(shape))
        named[name].data = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last parameter")
    return config, params


def save_checkpoint(path: str | Path, config: TmrnConfig, params: TmrnParams | dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(config, params))


def load_checkpoint(path: str | Path) -> tuple[TmrnConfig, TmrnParams]:
    return loads_checkpoint(Path(path).read_bytes())
