"""Versioned binary checkpoints: config echo, named float64 blobs, optimizer state, sha256.

Layout (little-endian)::

    magic  b"PVASRCKP"
    u32    format version
    u32    header length, then UTF-8 JSON (sorted keys)
    u32    parameter count, then per parameter:
           u16 name length, name, u8 ndim, u32 * ndim shape, float64 data
    u8     optimizer present flag; if set: u64 step, then per parameter
           (same order) the first and second moment blobs
    32     sha256 of everything above
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, MissingFile, ShapeMismatch, VersionMismatch

MAGIC = b"PVASRCKP"
FORMAT_VERSION = 1


@dataclass
class OptimizerState:
    """AdamW moments keyed by parameter name, plus the step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    header: dict
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None

    @property
    def model_config(self) -> dict:
        return self.header.get("model", {})


def _write_blob(buf: io.BytesIO, arr: np.ndarray):
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _dump(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    header = json.dumps(ckpt.header, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_blob(buf, arr)
    opt = ckpt.optimizer
    buf.write(struct.pack("<B", opt is not None))
    if opt is not None:
        buf.write(struct.pack("<Q", opt.step))
        for name, arr in ckpt.params.items():
            for table in (opt.m, opt.v):
                moment = table.get(name)
                _write_blob(buf, np.zeros_like(arr) if moment is None else moment)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def dumps_checkpoint(params: dict[str, np.ndarray], header: dict,
                     optimizer: OptimizerState | None = None) -> bytes:
    return _dump(Checkpoint(header, params, optimizer))


def save_checkpoint(path, params: dict[str, np.ndarray], header: dict,
                    optimizer: OptimizerState | None = None) -> Path:
    """Write atomically (temp file + rename) so a crash never leaves half a checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_checkpoint(params, header, optimizer))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def loads_checkpoint(data: bytes, expected_shapes: dict[str, tuple] | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 + 32 or not data.startswith(MAGIC):
        raise CorruptFile("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable header: {exc}") from None
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        params[name] = r.blob(tuple(shape))
    (has_opt,) = r.unpack("<B")
    opt = None
    if has_opt:
        (step,) = r.unpack("<Q")
        opt = OptimizerState(step)
        for name, arr in params.items():
            opt.m[name] = r.blob(arr.shape)
            opt.v[name] = r.blob(arr.shape)
    if r.pos != len(body):
        raise CorruptFile("trailing bytes after optimizer state")
    if expected_shapes is not None:
        check_shapes(params, expected_shapes)
    return Checkpoint(header, params, opt)


def check_shapes(params: dict[str, np.ndarray], expected: dict[str, tuple]):
    if set(params) != set(expected):
        diff = sorted(set(params) ^ set(expected))
        raise ShapeMismatch(f"parameter names differ from the configured model: {diff[:4]}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise ShapeMismatch(f"{name}: stored {params[name].shape}, model expects {tuple(shape)}")


def load_checkpoint(path, expected_shapes: dict[str, tuple] | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"checkpoint not found: {path}")
    return loads_checkpoint(path.read_bytes(), expected_shapes)
