"""Counter-based random streams.

A stream is named by a run seed and a tuple of integer ids. The ids are hashed
through numpy's SeedSequence into a Philox key, so the draws of a stream depend
only on its name: never on how many streams were opened before it, on which
worker opened it, or on how the batch was split.

Time steps do not enter the key. A stream positioned at step `t` starts Philox
at counter `t << 192`, so consecutive steps reuse one key and never overlap.
"""
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from config.constants import STREAM_BATCH_SIGN
from exceptions import ContractViolation
from models.neuron import sample_spikes


@lru_cache(maxsize=65536)
def _philox_key(seed, stream_id):
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=stream_id)
    return sequence.generate_state(2, dtype=np.uint64)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: tuple = ()
    counter: int = 0

    def child(self, *ids):
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    def at(self, step):
        return replace(self, counter=int(step))

    def generator(self):
        counter = np.array([0, 0, 0, self.counter], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=_philox_key(self.seed, self.stream_id), counter=counter))

    def uniform(self, shape):
        return self.generator().random(shape)


class SpikeSampler:
    """Per-sample spike streams for one batch.

    The stream of sample `s`, layer `l`, time step `t` is
    `root.child(s, l).at(t)`; `root` carries the context (epoch, frame, phase).
    """

    def __init__(self, root, sample_ids):
        self.root = root
        self.sample_ids = np.asarray(sample_ids, dtype=np.int64)

    def __len__(self):
        return len(self.sample_ids)

    def context(self, *ids):
        return SpikeSampler(self.root.child(*ids), self.sample_ids)

    def subset(self, positions):
        return SpikeSampler(self.root, self.sample_ids[positions])

    def stream(self, sample_id, layer, step):
        return self.root.child(sample_id, layer).at(step)

    def uniform(self, layer, step, shape):
        """Uniform draws of shape (batch, *shape), one stream per sample."""
        return np.stack([self.stream(s, layer, step).uniform(shape) for s in self.sample_ids])

    def sample(self, prob, layer, step):
        return sample_spikes(prob, _StepDraws(self, layer, step))


@dataclass(frozen=True)
class _StepDraws:
    """Uniform source for one (layer, step) of a batch; axis 0 runs over samples."""
    sampler: SpikeSampler
    layer: int
    step: int

    def uniform(self, shape):
        if shape[0] != len(self.sampler):
            raise ContractViolation(f"batch of {shape[0]} probabilities for {len(self.sampler)} spike streams")
        return self.sampler.uniform(self.layer, self.step, tuple(shape[1:]))


def batch_sign(seed, *ids):
    """Random sign of the nudging factor for one batch, +1 or -1 with equal odds."""
    draw = RngStream(seed, (STREAM_BATCH_SIGN,) + tuple(int(i) for i in ids)).uniform(())
    return 1.0 if draw < 0.5 else -1.0
