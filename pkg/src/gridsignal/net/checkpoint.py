"""Binary checkpoint container for named float32 arrays.

Layout, all little-endian:

    magic  4 bytes  "GSRL"
    u16    format version
    u32    array count
    per array:
        u16    name length, then UTF-8 name bytes
        u8     rank
        u32[]  one dimension per rank entry
        f32[]  row-major array data

Round-trips are bit-exact for float32 stores; wider stores are cast down on
save.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ParamStore

MAGIC = b"GSRL"
VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed or truncated checkpoint files."""


def save_params(path, params: ParamStore) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params.arrays))]
    for name, arr in params.arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _read(blob: bytes, offset: int, size: int) -> tuple[bytes, int]:
    if offset + size > len(blob):
        raise CheckpointError(
            f"truncated checkpoint: wanted {size} bytes at offset {offset}, "
            f"file has {len(blob)}"
        )
    return blob[offset : offset + size], offset + size


def _parse(blob: bytes):
    head, offset = _read(blob, 0, 10)
    if head[:4] != MAGIC:
        raise CheckpointError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack("<HI", head[4:])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    for _ in range(count):
        raw, offset = _read(blob, offset, 2)
        (name_len,) = struct.unpack("<H", raw)
        raw, offset = _read(blob, offset, name_len)
        name = raw.decode("utf-8")
        raw, offset = _read(blob, offset, 1)
        rank = raw[0]
        raw, offset = _read(blob, offset, 4 * rank)
        shape = struct.unpack(f"<{rank}I", raw)
        n_items = int(np.prod(shape)) if rank else 1
        raw, offset = _read(blob, offset, 4 * n_items)
        yield name, shape, raw


def load_params(path) -> ParamStore:
    blob = Path(path).read_bytes()
    arrays = {}
    for name, shape, raw in _parse(blob):
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return ParamStore(arrays)


def inspect_checkpoint(path) -> list[tuple[str, tuple[int, ...]]]:
    blob = Path(path).read_bytes()
    return [(name, shape) for name, shape, _ in _parse(blob)]
