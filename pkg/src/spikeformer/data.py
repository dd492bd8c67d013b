"""Dataset sources: IDX image/label files and a deterministic synthetic set.

The synthetic generator renders class-distinct glyphs (bars, crosses,
rings, ...) at jittered positions on single-channel images. It is easy
enough that a nearest-centroid baseline clears 80%, which anchors the
desk-scale training targets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Images in [0,1], shape [N, C, H, W]; integer labels in [0, classes)."""
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse an IDX image/label file pair (big-endian headers, u8 payload)."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataError(f"count mismatch: {len(images)} images in {images_path} "
                        f"vs {len(labels)} labels in {labels_path}")
    return Dataset(images=images[:, None, :, :].astype(np.float32) / 255.0,
                   labels=labels.astype(np.int64))


def _read_file(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _read_idx_images(path: str) -> np.ndarray:
    raw = _read_file(path)
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad images magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})")
    expected = count * rows * cols
    payload = raw[16:]
    if len(payload) != expected:
        raise DataError(f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path: str) -> np.ndarray:
    raw = _read_file(path)
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad labels magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})")
    payload = raw[8:]
    if len(payload) != count:
        raise DataError(f"{path}: truncated payload, expected {count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    """Write u8 images [N, H, W] (or [N,1,H,W]) and labels to IDX files."""
    from . import fileio
    if images.ndim == 4:
        images = images[:, 0]
    arr = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = arr.shape
    fileio.atomic_write_bytes(images_path,
                              struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + arr.tobytes())
    lab = np.ascontiguousarray(labels, dtype=np.uint8)
    fileio.atomic_write_bytes(labels_path, struct.pack(">II", IDX_LABELS_MAGIC, len(lab)) + lab.tobytes())


# ---------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------

def _paint(canvas: np.ndarray, cls: int, rng: np.random.Generator) -> None:
    """Draw the glyph for ``cls`` at a jittered position; canvas is [S, S]."""
    s = canvas.shape[0]
    thick = max(1, s // 8)
    lo = max(2, s // 4)
    span = s - 2 * lo
    jx = int(rng.integers(-lo // 2, lo // 2 + 1))
    jy = int(rng.integers(-lo // 2, lo // 2 + 1))
    a, b = lo + jy, lo + span + jy
    c, d = lo + jx, lo + span + jx
    cy, cx = (a + b) // 2, (c + d) // 2
    if cls % 10 == 0:      # filled square
        canvas[a:b, c:d] = 1.0
    elif cls % 10 == 1:    # horizontal bar
        canvas[cy - thick:cy + thick, 1:s - 1] = 1.0
    elif cls % 10 == 2:    # vertical bar
        canvas[1:s - 1, cx - thick:cx + thick] = 1.0
    elif cls % 10 == 3:    # plus
        canvas[cy - thick:cy + thick, c:d] = 1.0
        canvas[a:b, cx - thick:cx + thick] = 1.0
    elif cls % 10 == 4:    # diagonal cross
        for i in range(span):
            y, x = a + i, c + i
            canvas[y:y + thick, x:x + thick] = 1.0
            canvas[y:y + thick, d - i - thick:d - i] = 1.0
    elif cls % 10 == 5:    # ring
        canvas[a:b, c:d] = 1.0
        canvas[a + thick:b - thick, c + thick:d - thick] = 0.0
    elif cls % 10 == 6:    # L corner
        canvas[a:b, c:c + thick * 2] = 1.0
        canvas[b - thick * 2:b, c:d] = 1.0
    elif cls % 10 == 7:    # T shape
        canvas[a:a + thick * 2, c:d] = 1.0
        canvas[a:b, cx - thick:cx + thick] = 1.0
    elif cls % 10 == 8:    # dot grid
        step = max(2, span // 3)
        for y in range(a, b, step):
            for x in range(c, d, step):
                canvas[y:y + thick, x:x + thick] = 1.0
    else:                  # single diagonal
        for i in range(span):
            canvas[a + i:a + i + thick, c + i:c + i + thick] = 1.0


def synth_shapes(num_classes: int, size: int, count: int, seed: int,
                 noise: float = 0.05) -> Dataset:
    """Deterministic synthetic classification set; labels balanced within one."""
    if not 2 <= num_classes <= 10:
        raise DataError(f"synthetic set supports 2..10 classes, got {num_classes}")
    if size < 8:
        raise DataError(f"synthetic image size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    images = np.zeros((count, 1, size, size), dtype=np.float32)
    labels = np.array([i % num_classes for i in range(count)], dtype=np.int64)
    perm = rng.permutation(count)
    labels = labels[perm]
    for i in range(count):
        _paint(images[i, 0], int(labels[i]), rng)
    if noise > 0:
        images += rng.normal(0.0, noise, size=images.shape).astype(np.float32)
        np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images=images, labels=labels)


def parse_data_spec(spec: str, seed: int = 0, image_size: int | None = None) -> tuple[Dataset, Dataset]:
    """Resolve a CLI data spec into (train, test) datasets.

    ``synth:<classes>x<count>`` renders ``count`` train and ``count // 4``
    test samples from disjoint seed streams. ``idx:<images>,<labels>``
    loads the pair and holds out the trailing sixth as the test split.
    """
    if spec.startswith("synth:"):
        body = spec[len("synth:"):]
        try:
            classes_s, count_s = body.split("x", 1)
            classes, count = int(classes_s), int(count_s)
        except ValueError as exc:
            raise DataError(f"bad synth spec {spec!r}; expected synth:<classes>x<count>") from exc
        size = image_size or 16
        train = synth_shapes(classes, size, count, seed=seed)
        test = synth_shapes(classes, size, max(count // 4, 1), seed=seed + 1_000_003)
        return train, test
    if spec.startswith("idx:"):
        body = spec[len("idx:"):]
        parts = body.split(",")
        if len(parts) != 2:
            raise DataError(f"bad idx spec {spec!r}; expected idx:<images>,<labels>")
        ds = load_idx(parts[0], parts[1])
        holdout = max(1, len(ds) // 6) if len(ds) >= 2 else 0
        split = len(ds) - holdout
        return ds.subset(slice(0, split)), ds.subset(slice(split, len(ds)))
    raise DataError(f"unknown data spec {spec!r}; use synth:... or idx:...")


def load_eval_dataset(spec: str, seed: int = 0, image_size: int | None = None) -> Dataset:
    """Resolve a data spec into a single evaluation dataset (no split)."""
    if spec.startswith("idx:"):
        parts = spec[len("idx:"):].split(",")
        if len(parts) != 2:
            raise DataError(f"bad idx spec {spec!r}; expected idx:<images>,<labels>")
        return load_idx(parts[0], parts[1])
    train, test = parse_data_spec(spec, seed=seed, image_size=image_size)
    return test
