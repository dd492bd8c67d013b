"""Bit-exact checkpoint format.

Layout (all integers little-endian):

    magic "SPKF" (4 bytes)
    format version  u32
    config blob     u32 length + UTF-8 key=value lines
    tensor count    u32
    per tensor:     u16 name length + UTF-8 name
                    u8 rank, then each dim as u32
                    values as float32, row-major

Values are stored as float32, so a float32 model round-trips bitwise.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from . import fileio
from .errors import CheckpointFormatError, CheckpointShapeError
from .model import ModelConfig, SpikeTransformer

MAGIC = b"SPKF"
VERSION = 1


def save_checkpoint(path: str, config: ModelConfig, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = fileio.format_kv_lines(config.to_kv()).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes(order="C"))
    fileio.atomic_write_bytes(path, buf.getvalue())


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.payload):
            raise CheckpointFormatError(f"{self.path}: truncated checkpoint "
                                        f"(wanted {n} bytes at offset {self.pos})")
        chunk = self.payload[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load_checkpoint(path: str) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    rd = _Reader(payload, path)
    if rd.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes (not a checkpoint)")
    version = rd.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    blob = rd.take(rd.u32()).decode("utf-8")
    config = ModelConfig.from_kv(fileio.parse_kv_lines(blob))
    count = rd.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = rd.take(rd.u16()).decode("utf-8")
        rank = rd.u8()
        shape = tuple(rd.u32() for _ in range(rank))
        n_elems = 1
        for dim in shape:
            n_elems *= dim
        raw = rd.take(4 * n_elems)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if rd.pos != len(payload):
        raise CheckpointFormatError(f"{path}: {len(payload) - rd.pos} trailing bytes")
    return config, arrays


def save_model(path: str, model: SpikeTransformer) -> None:
    save_checkpoint(path, model.config, model.state_arrays())


def load_model(path: str, expect_config: ModelConfig | None = None) -> SpikeTransformer:
    """Rebuild a model from a checkpoint; optionally insist on a config match."""
    config, arrays = load_checkpoint(path)
    if expect_config is not None and expect_config.to_kv() != config.to_kv():
        raise CheckpointShapeError("checkpoint config does not match the requested config")
    model = SpikeTransformer(config, seed=0)
    model.load_state_arrays(arrays)
    return model
