"""File helpers: atomic writes, the key=value config dialect, CSV, PGM.

Every artifact the package emits goes through ``atomic_write_*`` (temp
file + rename) so an interrupted run never leaves a truncated file that
still parses.
"""

from __future__ import annotations

import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def parse_kv_lines(text: str) -> dict[str, str]:
    """Parse the UTF-8 key=value dialect shared by config files and checkpoints."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key in {raw!r}")
        out[key] = value.strip()
    return out


def format_kv_lines(items: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in items.items())


def write_pgm(path: str, values: np.ndarray) -> None:
    """8-bit binary PGM, min-max normalized per file; the minimum maps to black."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM expects a 2-D array, got shape {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = (arr - lo) * (255.0 / (hi - lo))
    else:
        scaled = np.zeros_like(arr)
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read P5/P2 PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4 or tokens[0] not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if tokens[0] == b"P5":
        raw = data[i + 1:i + 1 + width * height]
        if len(raw) < width * height:
            raise ValueError(f"{path}: truncated PGM payload")
        arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    else:
        arr = np.array(data[i:].split(), dtype=np.float64)
        if arr.size != width * height:
            raise ValueError(f"{path}: truncated PGM payload")
    return (arr / maxval).reshape(height, width)
