"""IDX tensor files and backdoor injection for the image trial.

IDX layout: two zero bytes, a type byte (only 0x08, unsigned byte, is
supported), a rank byte, then rank big-endian uint32 dimension sizes,
then the row-major payload.  Parsing and serialization round-trip
byte-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .core import LabeledDataset, _frozen
from .errors import ConfigError, FormatError, SamplerError, TruncationError

IDX_UBYTE = 0x08
IMAGE_SIDE = 28
NUM_CLASSES = 10


def parse_idx(data: bytes) -> tuple[tuple[int, ...], np.ndarray]:
    """Decode an IDX byte stream into (dims, flat uint8 payload)."""
    if len(data) < 4:
        raise TruncationError("stream shorter than the 4-byte magic")
    if data[0] != 0 or data[1] != 0:
        raise FormatError("magic must start with two zero bytes")
    if data[2] != IDX_UBYTE:
        raise FormatError(f"unsupported type byte 0x{data[2]:02x}; only unsigned byte (0x08)")
    ndim = data[3]
    if ndim == 0:
        raise FormatError("rank byte must be positive")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise TruncationError("stream ends inside the dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    expected = 1
    for d in dims:
        expected *= d
    payload = data[header_end:]
    if len(payload) < expected:
        raise TruncationError(
            f"payload holds {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise FormatError(
            f"payload holds {len(payload)} bytes beyond the declared {expected}; "
            "rank byte and dimensions disagree with the stream")
    return dims, np.frombuffer(payload, dtype=np.uint8).copy()


def serialize_idx(dims: tuple[int, ...], payload: np.ndarray) -> bytes:
    """Inverse of parse_idx for unsigned-byte tensors."""
    flat = np.ascontiguousarray(payload, dtype=np.uint8).ravel()
    expected = 1
    for d in dims:
        expected *= int(d)
    if flat.size != expected:
        raise FormatError(f"payload has {flat.size} entries, dims declare {expected}")
    header = bytes([0, 0, IDX_UBYTE, len(dims)]) + struct.pack(f">{len(dims)}I", *dims)
    return header + flat.tobytes()


@dataclass(frozen=True)
class ImageDataset:
    """Flattened images in [0,1] with class labels and provenance flags."""

    images: np.ndarray
    labels: np.ndarray
    is_poison: np.ndarray

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        flags = np.asarray(self.is_poison, dtype=bool)
        if imgs.ndim != 2:
            raise ConfigError("images must be a (n, pixels) matrix")
        n = imgs.shape[0]
        if labels.shape != (n,) or flags.shape != (n,):
            raise ConfigError("labels and flags must match the image count")
        if n and (imgs.min() < 0.0 or imgs.max() > 1.0):
            raise ConfigError("pixels must lie in [0, 1]")
        if n and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise ConfigError(f"labels must lie in [0, {NUM_CLASSES})")
        object.__setattr__(self, "images", _frozen(imgs))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "is_poison", _frozen(flags))

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "ImageDataset":
        idx = np.asarray(indices)
        return ImageDataset(self.images[idx], self.labels[idx], self.is_poison[idx])

    def to_labeled(self) -> LabeledDataset:
        return LabeledDataset(self.images, self.labels, self.is_poison,
                              num_classes=NUM_CLASSES)


def load_image_file(path) -> np.ndarray:
    """Read an IDX image file and rescale pixels into [0,1]."""
    with open(path, "rb") as fh:
        dims, payload = parse_idx(fh.read())
    if len(dims) != 3:
        raise FormatError(f"image file must be rank 3, got rank {len(dims)}")
    n, rows, cols = dims
    return (payload.reshape(n, rows * cols) / 255.0).astype(np.float64)


def load_label_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims, payload = parse_idx(fh.read())
    if len(dims) != 1:
        raise FormatError(f"label file must be rank 1, got rank {len(dims)}")
    return payload.astype(np.int64)


def load_image_dataset(image_path, label_path) -> ImageDataset:
    images = load_image_file(image_path)
    labels = load_label_file(label_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image and label files disagree on the example count")
    return ImageDataset(images, labels, np.zeros(len(labels), dtype=bool))


def x_pattern_indices(side: int = IMAGE_SIDE, block: int = 5) -> np.ndarray:
    """Flat pixel indices of the two diagonals of the top-left block."""
    idx = set()
    for i in range(block):
        idx.add(i * side + i)
        idx.add(i * side + (block - 1 - i))
    return np.array(sorted(idx), dtype=np.int64)


def apply_image_patch(images: np.ndarray, amplitude: float,
                      pattern: np.ndarray | None = None) -> np.ndarray:
    """Add the watermark at +amplitude and clip back into [0,1]."""
    if pattern is None:
        pattern = x_pattern_indices()
    out = np.array(images, dtype=np.float64, copy=True)
    out[:, pattern] = np.minimum(out[:, pattern] + amplitude, 1.0)
    return np.maximum(out, 0.0)


def inject_backdoor(D: ImageDataset, t: int, alpha: float, amplitude: float,
                    seed: int, pattern: np.ndarray | None = None) -> ImageDataset:
    """Append watermarked, relabeled copies of non-target images.

    Draws k = ceil(alpha*n / (1-alpha)) source images uniformly with
    replacement from those whose label differs from t, stamps them at
    +amplitude with clipping, relabels them t, and appends them with the
    poison flag set, so the resulting poison fraction is k/(n+k).
    Pre-existing examples are never altered.
    """
    if not 0.0 <= alpha < 1.0:
        raise ConfigError("alpha must lie in [0, 1)")
    if not 0.0 < amplitude <= 0.3:
        raise ConfigError("amplitude must lie in (0, 0.3]")
    if alpha == 0.0:
        return D
    n = len(D)
    candidates = np.flatnonzero(D.labels != t)
    if candidates.size == 0:
        raise SamplerError(f"no source images with label different from {t}")
    k = int(np.ceil(alpha * n / (1.0 - alpha)))
    g = rng.generator(seed, 61)
    chosen = candidates[g.integers(0, candidates.size, size=k)]
    stamped = apply_image_patch(D.images[chosen], amplitude, pattern)
    images = np.vstack([D.images, stamped])
    labels = np.concatenate([D.labels, np.full(k, t, dtype=np.int64)])
    flags = np.concatenate([D.is_poison, np.ones(k, dtype=bool)])
    return ImageDataset(images, labels, flags)
