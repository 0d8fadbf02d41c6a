"""Datasets: IDX container I/O, synthetic blob generation, spike encoders.

IDX layout (big-endian): images carry magic 0x00000803 then N, H, W int32
headers and N*H*W unsigned bytes; labels carry magic 0x00000801 then N and
N bytes.  Pixels map to [0, 1] by dividing by 255.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    ShapeError,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    n_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(
                f"labels shape {self.labels.shape} != ({self.images.shape[0]},)"
            )
        if self.n_classes < 2:
            raise ShapeError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ShapeError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)


def _read_exact(fh, n: int, path, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return blob


def load_idx(images_path, labels_path) -> Dataset:
    with open(images_path, "rb") as fh:
        (magic,) = struct.unpack(">i", _read_exact(fh, 4, images_path, "magic"))
        if magic != IMAGES_MAGIC:
            raise IdxMagicError(
                f"{images_path}: magic {magic:#010x} != {IMAGES_MAGIC:#010x}"
            )
        n, h, w = struct.unpack(">iii", _read_exact(fh, 12, images_path, "dims"))
        raw = _read_exact(fh, n * h * w, images_path, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, h, w)
    with open(labels_path, "rb") as fh:
        (magic,) = struct.unpack(">i", _read_exact(fh, 4, labels_path, "magic"))
        if magic != LABELS_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: magic {magic:#010x} != {LABELS_MAGIC:#010x}"
            )
        (n_labels,) = struct.unpack(">i", _read_exact(fh, 4, labels_path, "count"))
        if n_labels != n:
            raise IdxCountMismatchError(
                f"{labels_path}: {n_labels} labels for {n} images"
            )
        labels = np.frombuffer(
            _read_exact(fh, n_labels, labels_path, "label data"), dtype=np.uint8
        )
    return Dataset(
        images=images.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        n_classes=int(labels.max()) + 1 if n_labels else 2,
    )


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Inverse of load_idx; rejects multi-channel images (the container is
    single-plane).  Pixels are rounded back to bytes."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise ShapeError(f"IDX export requires single-channel images, got C={c}")
    pix = np.rint(dataset.images * 255.0)
    if pix.min() < 0 or pix.max() > 255:
        raise ShapeError("images must lie in [0, 1] for IDX export")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGES_MAGIC, n, h, w))
        fh.write(pix.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def synthetic_blobs(
    n_classes: int = 4,
    per_class: int = 20,
    channels: int = 1,
    height: int = 8,
    width: int = 8,
    noise: float = 0.15,
    seed: int = 0,
    prototype_seed: int | None = None,
) -> Dataset:
    """Gaussian blobs around per-class prototype images.

    Prototypes depend only on `prototype_seed` (defaults to `seed`), so a
    train and a test set drawn with different `seed` but the same
    `prototype_seed` share class structure.
    """
    if n_classes < 2 or per_class < 1:
        raise ShapeError(
            f"need n_classes >= 2 and per_class >= 1, got {n_classes}/{per_class}"
        )
    proto_rng = np.random.default_rng(seed if prototype_seed is None else prototype_seed)
    protos = proto_rng.uniform(0.15, 0.85, size=(n_classes, channels, height, width))
    rng = np.random.default_rng(seed)
    images = np.empty((n_classes * per_class, channels, height, width))
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for k in range(n_classes):
        sl = slice(k * per_class, (k + 1) * per_class)
        jitter = noise * rng.standard_normal((per_class, channels, height, width))
        images[sl] = np.clip(protos[k] + jitter, 0.0, 1.0)
        labels[sl] = k
    return Dataset(images=images, labels=labels, n_classes=n_classes)


def encode_constant(images: np.ndarray, timesteps: int) -> np.ndarray:
    """Repeat the image as the input current at every step: (T, N, C, H, W)."""
    if timesteps < 1:
        raise ShapeError(f"timesteps must be >= 1, got {timesteps}")
    images = np.asarray(images, dtype=np.float64)
    return np.broadcast_to(images, (timesteps,) + images.shape).copy()


def encode_bernoulli(
    images: np.ndarray, timesteps: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-step Bernoulli spikes with firing probability equal to intensity."""
    if timesteps < 1:
        raise ShapeError(f"timesteps must be >= 1, got {timesteps}")
    images = np.asarray(images, dtype=np.float64)
    if images.min() < 0 or images.max() > 1:
        raise ShapeError("bernoulli encoding requires intensities in [0, 1]")
    draws = rng.random((timesteps,) + images.shape)
    return (draws < images).astype(np.float64)
