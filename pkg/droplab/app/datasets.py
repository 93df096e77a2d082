"""
Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, and a synthetic generator.

Pixels are divided by 255 into [0, 1]; no mean/std standardization.
Byte layouts are documented in docs/FILE_FORMATS.md.
"""
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError
from .nn import DTYPE

logger = logging.getLogger(__name__)

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_NUM_CLASSES = 10
MNIST_NUM_CLASSES = 10

PathLike = Union[str, Path]


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, channels, height, width), float64 in [0, 1]
    labels: np.ndarray  # (n,), int64 class indices
    num_classes: int
    split: Split = Split.TRAIN

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (n, c, h, w), got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def with_labels(self, labels: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.images, np.asarray(labels), self.num_classes, self.split)


def _read(path: PathLike) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    return path.read_bytes()


def _idx_header(data: bytes, expected_magic: int, dims: int, source: str) -> Tuple[int, ...]:
    # i32 magic, i32 count, then (dims - 1) more i32 sizes, all big-endian
    need = 4 * (1 + dims)
    if len(data) < need:
        raise DataError(f"{source}: IDX header needs {need} bytes, file has {len(data)}")
    magic, *sizes = struct.unpack(f">{1 + dims}I", data[:need])
    if magic != expected_magic:
        raise DataError(f"{source}: bad IDX magic, expected {expected_magic}, found {magic}")
    return tuple(sizes)


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, split: Split = Split.TRAIN) -> LabeledDataset:
    """Load an (images, labels) IDX pair, uncompressed, as shipped by the MNIST site after gunzip."""
    raw_images = _read(images_path)
    raw_labels = _read(labels_path)
    count, rows, cols = _idx_header(raw_images, MNIST_IMAGE_MAGIC, 3, str(images_path))
    (label_count,) = _idx_header(raw_labels, MNIST_LABEL_MAGIC, 1, str(labels_path))
    if count != label_count:
        raise DataError(f"image/label count mismatch: {images_path} has {count}, {labels_path} has {label_count}")

    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise DataError(f"{images_path}: expected {count * rows * cols} pixel bytes, found {pixels.size}")
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8)
    if labels.size != count:
        raise DataError(f"{labels_path}: expected {count} label bytes, found {labels.size}")
    if labels.size and labels.max() >= MNIST_NUM_CLASSES:
        raise DataError(f"{labels_path}: label {int(labels.max())} outside [0, {MNIST_NUM_CLASSES})")

    images = pixels.reshape(count, 1, rows, cols).astype(DTYPE) / 255.0
    logger.info(f"Loaded {count} MNIST images ({rows}x{cols}) from {images_path}")
    return LabeledDataset(images, labels.astype(np.int64), MNIST_NUM_CLASSES, split)


def write_mnist_idx(dataset: LabeledDataset, images_path: PathLike, labels_path: PathLike):
    """Write a single-channel dataset back to the IDX layout (pixels rounded to bytes)."""
    n, channels, rows, cols = dataset.images.shape
    if channels != 1:
        raise DataError(f"IDX images are single-channel, dataset has {channels} channels")
    pixels = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">4I", MNIST_IMAGE_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", MNIST_LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


def load_cifar10_binary(batch_paths: Sequence[PathLike], split: Split = Split.TRAIN) -> LabeledDataset:
    """
    Load CIFAR-10 binary batches: 3073-byte records of one label byte followed by
    1024 red, 1024 green and 1024 blue pixel bytes. Files are concatenated in order.
    """
    images, labels = [], []
    for path in batch_paths:
        data = _read(path)
        if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES:
            raise DataError(f"{path}: length {len(data)} is not a positive multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        batch_labels = records[:, 0]
        if batch_labels.max() >= CIFAR_NUM_CLASSES:
            bad = int(np.argmax(batch_labels >= CIFAR_NUM_CLASSES))
            raise DataError(f"{path}: record {bad} has label byte {int(batch_labels[bad])} > 9")
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(batch_labels)
    if not images:
        raise DataError("no CIFAR-10 batch files given")
    stacked = np.concatenate(images).astype(DTYPE) / 255.0
    logger.info(f"Loaded {stacked.shape[0]} CIFAR-10 images from {len(images)} batch file(s)")
    return LabeledDataset(stacked, np.concatenate(labels).astype(np.int64), CIFAR_NUM_CLASSES, split)


def make_synthetic(n: int, c: int, image_shape: Sequence[int], seed: int,
                   split: Split = Split.TRAIN, noise_std: float = 0.15) -> LabeledDataset:
    """
    Seeded class-conditional images: each class has a random prototype pattern in
    [0, 1]; samples are the prototype plus Gaussian noise, clipped to [0, 1].
    Labels cycle through the classes before shuffling, so every class appears at
    least n // c times.

    The prototypes depend on seed only, so the train and test splits share classes
    when they are generated with the same seed and a different split tag.
    """
    if c < 2:
        raise ConfigError(f"synthetic data needs at least 2 classes, got {c}")
    if n < c:
        raise ConfigError(f"synthetic data needs n >= c, got n={n}, c={c}")
    shape = tuple(int(d) for d in image_shape)
    proto_rng = np.random.default_rng([seed, 0])
    prototypes = proto_rng.random((c,) + shape)
    rng = np.random.default_rng([seed, 1 if split == Split.TRAIN else 2])
    labels = rng.permutation(np.arange(n) % c)
    images = np.clip(prototypes[labels] + rng.normal(0.0, noise_std, size=(n,) + shape), 0.0, 1.0)
    return LabeledDataset(images.astype(DTYPE), labels, c, split)


def take_subset(dataset: LabeledDataset, size: int) -> LabeledDataset:
    """First `size` samples; independent of any seed so datasets stay fixed across seeds."""
    if size <= 0 or size >= len(dataset):
        return dataset
    return LabeledDataset(dataset.images[:size], dataset.labels[:size], dataset.num_classes, dataset.split)
