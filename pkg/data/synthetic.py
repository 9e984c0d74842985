"""Synthetic datasets: the moving-bar frame sequences and random images."""
import logging
from dataclasses import dataclass

import numpy as np

from data.idx import Dataset
from exceptions import ContractViolation, DatasetConsistencyError

logger = logging.getLogger(__name__)

LEFT = 0
RIGHT = 1


@dataclass
class SequenceDataset:
    """Frame sequences (N, T, C, H, W) in [0, 1] with one label per sequence."""
    sequences: np.ndarray
    labels: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sequences.ndim != 5:
            raise DatasetConsistencyError(f"sequences must be (N, T, C, H, W), got shape {self.sequences.shape}")
        if len(self.sequences) == 0:
            raise DatasetConsistencyError('dataset is empty')
        if len(self.sequences) != len(self.labels):
            raise DatasetConsistencyError(f"{len(self.sequences)} sequences but {len(self.labels)} labels")
        if np.min(self.sequences) < 0.0 or np.max(self.sequences) > 1.0:
            raise DatasetConsistencyError('frame values must lie in [0, 1]')
        if np.min(self.labels) < 0 or np.max(self.labels) >= self.n_classes:
            raise DatasetConsistencyError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def n_frames(self):
        return self.sequences.shape[1]

    @property
    def sample_shape(self):
        return self.sequences.shape[2:]

    def frame(self, t):
        return Dataset(self.sequences[:, t], self.labels, self.n_classes)

    def subset(self, n):
        if n is None or n >= len(self):
            return self
        return SequenceDataset(self.sequences[:n], self.labels[:n], self.n_classes)


def bar_columns(direction, frames, start):
    """Column of the bar at each of the `frames + 1` positions."""
    step = 1 if direction == RIGHT else -1
    return start + step * np.arange(frames + 1)


def make_moving_bar(n_samples, frames, size, seed):
    """Full-height bar moving one column per frame, class = direction.

    Each frame has an ON channel (the column the bar moved into) and an OFF
    channel (the column it left). Half of the samples move left, the rest
    right; start columns and the sample order are drawn from `seed`.
    """
    if frames < 2:
        raise ContractViolation(f"a moving bar needs at least 2 frames, got {frames}")
    if size <= frames:
        raise ContractViolation(f"a {size}-column field cannot hold a bar moving {frames} columns")
    rng = np.random.default_rng(seed)
    labels = np.array([LEFT] * (n_samples // 2) + [RIGHT] * (n_samples - n_samples // 2))
    labels = labels[rng.permutation(n_samples)]

    sequences = np.zeros((n_samples, frames, 2, size, size))
    for n, label in enumerate(labels):
        if label == RIGHT:
            start = rng.integers(0, size - frames)
        else:
            start = rng.integers(frames, size)
        columns = bar_columns(label, frames, start)
        for t in range(frames):
            sequences[n, t, 0, :, columns[t + 1]] = 1.0
            sequences[n, t, 1, :, columns[t]] = 1.0
    logger.debug("generated %d moving-bar sequences (%d frames, %dx%d)", n_samples, frames, size, size)
    return SequenceDataset(sequences, labels, n_classes=2)


def make_random_dataset(n_samples, sample_shape, n_classes, seed):
    """Uniform pixel intensities with uniform labels, for architecture smoke runs."""
    rng = np.random.default_rng(seed)
    images = rng.random((n_samples,) + tuple(sample_shape))
    labels = rng.integers(0, n_classes, size=n_samples)
    return Dataset(images, labels, n_classes)
