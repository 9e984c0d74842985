"""Mini-batching and label expansion."""
from typing import NamedTuple

import numpy as np

from exceptions import ContractViolation


class Batch(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def expand_labels(labels, n_classes, n_perclass=1):
    """One-hot targets with class c on neurons [c * n_perclass, (c + 1) * n_perclass)."""
    labels = np.asarray(labels, dtype=np.int64)
    if n_perclass < 1:
        raise ContractViolation(f"n_perclass must be at least 1, got {n_perclass}")
    one_hot = np.zeros((len(labels), n_classes))
    one_hot[np.arange(len(labels)), labels] = 1.0
    return np.repeat(one_hot, n_perclass, axis=1)


def epoch_order(n, shuffle_seed=None):
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng(shuffle_seed).permutation(n)


def batches(dataset, batch_size, shuffle_seed=None, n_classes=None, n_perclass=1):
    """Yield Batch tuples covering the dataset once; the last batch may be short.

    `shuffle_seed` (an int or a tuple of ints such as (seed, epoch)) fixes the
    sample order; None keeps the stored order.
    """
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be at least 1, got {batch_size}")
    samples = dataset.sequences if hasattr(dataset, 'sequences') else dataset.images
    n_classes = n_classes or dataset.n_classes
    order = epoch_order(len(dataset), shuffle_seed)
    for start in range(0, len(order), batch_size):
        indices = order[start:start + batch_size]
        labels = dataset.labels[indices]
        yield Batch(samples[indices], expand_labels(labels, n_classes, n_perclass), labels, indices)
