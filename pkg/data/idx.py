"""MNIST IDX reader and writer.

Images: big-endian i32 magic 0x00000803, i32 count, i32 rows, i32 cols, then
u8 pixels row-wise. Labels: magic 0x00000801, i32 count, then u8 labels.
Files ending in `.gz` are read transparently.
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from config.constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
from exceptions import DatasetConsistencyError, DatasetIOError, IdxFormatError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Images (N, C, H, W) in [0, 1] with integer labels in [0, n_classes)."""
    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetConsistencyError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) == 0:
            raise DatasetConsistencyError('dataset is empty')
        if len(self.images) != len(self.labels):
            raise DatasetConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        if np.min(self.images) < 0.0 or np.max(self.images) > 1.0:
            raise DatasetConsistencyError('pixel values must lie in [0, 1]')
        if np.min(self.labels) < 0 or np.max(self.labels) >= self.n_classes:
            raise DatasetConsistencyError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return self.images.shape[1:]

    def subset(self, n, seed=None):
        """First `n` samples, or a seeded random choice of `n` samples."""
        if n is None or n >= len(self):
            return self
        if seed is None:
            positions = np.arange(n)
        else:
            positions = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return Dataset(self.images[positions], self.labels[positions], self.n_classes)


def _open(path):
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"IDX file not found: {path}")
    return gzip.open(path, 'rb') if path.suffix == '.gz' else open(path, 'rb')


def read_idx_images(path):
    with _open(path) as stream:
        head = stream.read(4)
        if len(head) < 4:
            raise DatasetIOError(f"{path}: file ends inside the header")
        magic = struct.unpack('>i', head)[0]
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: magic 0x{magic:08x} is not an image file (0x{IDX_IMAGES_MAGIC:08x})")
        dims = stream.read(12)
        if len(dims) < 12:
            raise DatasetIOError(f"{path}: file ends inside the header")
        count, rows, cols = struct.unpack('>3i', dims)
        payload = stream.read()
    expected = count * rows * cols
    if len(payload) < expected:
        raise DatasetIOError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(count, rows, cols)


def read_idx_labels(path):
    with _open(path) as stream:
        head = stream.read(8)
        if len(head) < 8:
            raise DatasetIOError(f"{path}: file ends inside the header")
        magic, count = struct.unpack('>2i', head)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: magic 0x{magic:08x} is not a label file (0x{IDX_LABELS_MAGIC:08x})")
        payload = stream.read()
    if len(payload) < count:
        raise DatasetIOError(f"{path}: expected {count} labels, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=count)


def load_idx(images_path, labels_path, n_classes=10):
    """Load an image/label file pair as a Dataset with pixels scaled by 1/255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetConsistencyError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels"
        )
    logger.info("loaded %d images of %dx%d from %s", len(images), images.shape[1], images.shape[2], images_path)
    return Dataset(images[:, None].astype(np.float64) / 255.0, labels, n_classes)


def write_idx(dataset, images_path, labels_path):
    """Write a single-channel Dataset back to IDX; pixels are rounded to u8."""
    if dataset.images.shape[1] != 1:
        raise DatasetConsistencyError('IDX images hold a single channel')
    count, _, rows, cols = dataset.images.shape
    pixels = np.rint(dataset.images[:, 0] * 255.0).astype(np.uint8)
    with open(images_path, 'wb') as stream:
        stream.write(struct.pack('>4i', IDX_IMAGES_MAGIC, count, rows, cols))
        stream.write(pixels.tobytes())
    with open(labels_path, 'wb') as stream:
        stream.write(struct.pack('>2i', IDX_LABELS_MAGIC, count))
        stream.write(dataset.labels.astype(np.uint8).tobytes())
