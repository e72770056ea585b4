"""Binary checkpoint format.

Layout, all little-endian::

    b"SSPC"  u16 version  u64 seed  u32 epoch
    u32 config_len  config (UTF-8 JSON, sorted keys)  32-byte sha256 of config
    u32 n_entries
    per entry: u16 name_len  name (UTF-8)  u8 dtype  u8 rank  u32 * rank extents  data

dtype 1 is float32, the only code written.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadMagicError, CheckpointIOError, VersionMismatchError

MAGIC = b"SSPC"
VERSION = 1
DTYPE_F32 = 1
_DTYPES = {DTYPE_F32: np.dtype("<f4")}


@dataclass
class Checkpoint:
    entries: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = 0
    config: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(_config_bytes(self.config)).hexdigest()

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Entries under `prefix.` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.entries.items() if k.startswith(p)}


def _config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = _config_bytes(ckpt.config)
    parts = [MAGIC, struct.pack("<HQI", VERSION, ckpt.seed & (2**64 - 1), ckpt.epoch),
             struct.pack("<I", len(cfg)), cfg, hashlib.sha256(cfg).digest(),
             struct.pack("<I", len(ckpt.entries))]
    for name, value in ckpt.entries.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<BB", DTYPE_F32, arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.astype("<f4").tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIOError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, seed, epoch = r.unpack("<HQI")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, reader supports {VERSION}")
    (cfg_len,) = r.unpack("<I")
    cfg = r.take(cfg_len)
    if hashlib.sha256(cfg).digest() != r.take(32):
        raise CheckpointIOError("config digest mismatch")
    try:
        config = json.loads(cfg.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIOError(f"unreadable config: {exc}") from None
    (n,) = r.unpack("<I")
    entries = {}
    for _ in range(n):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointIOError(f"{name}: unknown dtype code {code}")
        shape = r.unpack(f"<{rank}I")
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        entries[name] = data.astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointIOError(f"{len(buf) - r.pos} trailing bytes")
    return Checkpoint(entries, seed, epoch, config)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = encode_checkpoint(ckpt)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read {path}: {exc}") from exc
    return decode_checkpoint(data)
