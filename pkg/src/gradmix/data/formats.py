"""IDX (MNIST-style) and CIFAR binary readers/writers."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE


class DatasetFormatError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass
class ImageDataset:
    """N x C x H x W float32 images in [0, 1] with dense integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, index) -> "ImageDataset":
        return ImageDataset(self.images[index], self.labels[index], list(self.class_names))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255)


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


# -- IDX --------------------------------------------------------------------

def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DatasetFormatError(path, f"cannot read file ({exc.strerror})") from None


def read_idx_images(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 16:
        raise DatasetFormatError(path, "truncated header")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(path, f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(raw) != 16 + n * h * w:
        raise DatasetFormatError(path, f"expected {16 + n * h * w} bytes for {n}x{h}x{w}, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, h, w)


def read_idx_labels(path) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 8:
        raise DatasetFormatError(path, "truncated header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(path, f"bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + n:
        raise DatasetFormatError(path, f"expected {8 + n} bytes for {n} labels, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx(dataset: ImageDataset, images_path, labels_path) -> None:
    pixels = to_uint8(dataset.images)
    if pixels.shape[1] != 1:
        raise ValueError("IDX image files hold single-channel images")
    n, _, h, w = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    labels = np.asarray(dataset.labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("IDX labels must fit in one byte")
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n) + labels.astype(np.uint8).tobytes())


def default_labels_path(images_path) -> Path:
    p = Path(images_path)
    name = p.name.replace("images-idx3", "labels-idx1").replace("images", "labels")
    return p.with_name(name)


def load_idx(images_path, labels_path=None, num_classes: int = 256) -> ImageDataset:
    labels_path = labels_path or default_labels_path(images_path)
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(labels) != len(pixels):
        raise DatasetFormatError(labels_path, f"{len(labels)} labels for {len(pixels)} images")
    if len(labels) and labels.max() >= num_classes:
        raise DatasetFormatError(labels_path, f"label {labels.max()} out of range [0, {num_classes})")
    return ImageDataset(from_uint8(pixels), labels)


# -- CIFAR binary -----------------------------------------------------------

def load_cifar_binary(paths, label_bytes: int = 1, num_classes: int | None = None) -> ImageDataset:
    """Records of ``label_bytes`` label bytes then 3072 pixel bytes (R, G, B planes).

    With two label bytes (CIFAR-100) the second, fine-grained label is used.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    num_classes = num_classes or (10 if label_bytes == 1 else 100)
    record = label_bytes + CIFAR_PIXELS
    images, labels = [], []
    for path in paths:
        raw = _read(path)
        if not raw or len(raw) % record:
            raise DatasetFormatError(path, f"size {len(raw)} is not a positive multiple of the {record}-byte record")
        data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        lab = data[:, label_bytes - 1].astype(np.int64)
        if lab.max() >= num_classes:
            bad = int(np.argmax(lab >= num_classes))
            raise DatasetFormatError(path, f"record {bad}: label {lab[bad]} out of range [0, {num_classes})")
        images.append(data[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE))
        labels.append(lab)
    return ImageDataset(from_uint8(np.concatenate(images)), np.concatenate(labels))


def write_cifar_binary(dataset: ImageDataset, path, label_bytes: int = 1) -> None:
    pixels = to_uint8(dataset.images)
    if pixels.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError(f"CIFAR records hold 3x32x32 images, got {pixels.shape[1:]}")
    n = len(pixels)
    out = np.zeros((n, label_bytes + CIFAR_PIXELS), dtype=np.uint8)
    out[:, label_bytes - 1] = np.asarray(dataset.labels, dtype=np.uint8)
    out[:, label_bytes:] = pixels.reshape(n, -1)
    Path(path).write_bytes(out.tobytes())


def load_dataset(path, fmt: str, **kwargs) -> ImageDataset:
    if fmt == "idx":
        return load_idx(path, **kwargs)
    if fmt == "cifar-binary":
        return load_cifar_binary(path, **kwargs)
    raise ValueError(f"unknown dataset format {fmt!r}; expected 'idx' or 'cifar-binary'")
