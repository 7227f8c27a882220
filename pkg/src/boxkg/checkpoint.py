"""Binary checkpoint format.

Layout (little endian)::

    b"BKG1" | u32 version | u64 len | header JSON (UTF-8)
    u32 n_tables
    per table: u32 len | name (UTF-8) | u64 rows | u64 dim | f64[rows * dim]
    u32 CRC32 of everything before it

The header carries the config echo plus scalar training state (epoch, Adam
step counters, RNG state, best metric, history, vocabularies).
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .config import TrainConfig
from .state import TrainState

MAGIC = b"BKG1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _pack_str(s: str, fmt="<I") -> bytes:
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def _tables(state: TrainState):
    for prefix, tables in (("param", state.params), ("adam_m", state.m), ("adam_v", state.v),
                           ("best", state.best_params or {})):
        for name in sorted(tables):
            yield f"{prefix}/{name}", tables[name]


def _shape2(a: np.ndarray):
    rows = a.shape[0] if a.ndim >= 1 else 1
    return rows, (a.size // rows if rows else 0)


def dumps(state: TrainState) -> bytes:
    header = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "steps": state.steps,
        "rng": state.rng.bit_generator.state,
        "best_metric": state.best_metric,
        "best_epoch": state.best_epoch,
        "history": state.history,
        "vocab": state.vocab,
        "shapes": {name: list(a.shape) for name, a in _tables(state)},
    }
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(json.dumps(header), "<Q")]
    tables = list(_tables(state))
    parts.append(struct.pack("<I", len(tables)))
    for name, a in tables:
        rows, dim = _shape2(a)
        parts.append(_pack_str(name))
        parts.append(struct.pack("<QQ", rows, dim))
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(state: TrainState, path) -> None:
    data = dumps(state)
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumError("truncated checkpoint")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> TrainState:
    if data[:4] != MAGIC:
        raise VersionError("not a checkpoint file (bad magic bytes)")
    if len(data) < 12:
        raise ChecksumError("truncated checkpoint")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("checkpoint CRC mismatch (truncated or corrupted file)")
    r = _Reader(body)
    r.take(8)
    (hlen,) = r.unpack("<Q")
    header = json.loads(r.take(hlen).decode("utf-8"))
    (n_tables,) = r.unpack("<I")
    groups = {"param": {}, "adam_m": {}, "adam_v": {}, "best": {}}
    for _ in range(n_tables):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        rows, dim = r.unpack("<QQ")
        arr = np.frombuffer(r.take(8 * rows * dim), dtype="<f8").astype(np.float64)
        prefix, table = name.split("/", 1)
        groups[prefix][table] = arr.reshape(header["shapes"][name])
    if r.pos != len(body):
        raise ChecksumError("trailing bytes in checkpoint")

    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    return TrainState(
        config=TrainConfig.from_dict(header["config"]),
        params=groups["param"],
        m=groups["adam_m"],
        v=groups["adam_v"],
        steps={k: int(v) for k, v in header["steps"].items()},
        epoch=header["epoch"],
        rng=rng,
        best_metric=header["best_metric"],
        best_epoch=header["best_epoch"],
        best_params=groups["best"] or None,
        history=header["history"],
        vocab=header["vocab"],
    )


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        return loads(fh.read())
