"""Equilibrium Propagation training loop.

A batch is relaxed freely to xi*, then nudged towards its expanded one-hot
target to xi^beta (and to xi^-beta in three-phase mode). The weight gradient
is the contrast of dE/dw between the nudged and free fixed points, evaluated
at their firing rates.

Spike streams are keyed by (STREAM_TRAIN, epoch, frame, phase, sample, layer)
and positioned at the time step. Static training is the frame-0 case of
temporal training, so a single-frame sequence reproduces it bit for bit.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from config.constants import (
    PHASE_FREE,
    PHASE_NUDGE_NEG,
    PHASE_NUDGE_POS,
    STREAM_EVAL,
    STREAM_TRAIN,
)
from data.batching import batches
from exceptions import ContractViolation, DivergenceError
from models.dynamics import FixedPoint, PhaseConfig, relax, relax_meanfield
from models.energy import weight_grad_sums
from models.network import NetworkState
from models.rng import RngStream, SpikeSampler, batch_sign
from training.optimizers import apply_update, init_optimizer_state

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Hyper-parameters of one training run."""
    model_config = ConfigDict(populate_by_name=True, extra='forbid', frozen=True)

    lam: float = Field(alias='lambda', gt=0, le=1)
    t_free: int = Field(gt=0)
    t_nudge: int = Field(gt=0)
    beta: float = Field(gt=0)
    kappa: float = Field(gt=0)
    n_perclass: int = Field(default=1, ge=1)
    bias_mode: Literal['random_sign', 'three_phase'] = 'random_sign'
    optimizer: Literal['sgd', 'adamw'] = 'sgd'
    learning_rate: float = Field(ge=0)
    weight_decay: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=1, ge=1)
    epochs: int = Field(default=1, ge=0)
    seed: int = Field(default=0, ge=0)
    dynamics: Literal['stochastic', 'meanfield'] = 'stochastic'
    carry_state: Literal['nudged', 'reset'] = 'nudged'
    workers: int = Field(default=1, ge=1)
    shard_size: int = Field(default=1, ge=1)
    progress: bool = False

    def free_phase(self, record_traces=False, record_spikes=False):
        return PhaseConfig(self.lam, self.t_free, 0.0, record_traces, record_spikes)

    def nudge_phase(self, beta, record_traces=False, record_spikes=False):
        return PhaseConfig(self.lam, self.t_nudge, beta, record_traces, record_spikes)


@dataclass
class GradEstimate:
    grads: list
    beta_used: float
    free: Optional[FixedPoint] = None
    nudged: Optional[FixedPoint] = None
    nudge_residual: float = 0.0


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    firing_rates: list = field(default_factory=list)
    n_samples: int = 0

    def as_row(self):
        row = {'epoch': self.epoch, 'loss': self.loss, 'accuracy': self.accuracy}
        row.update({f"ifr_{i}": rate for i, rate in enumerate(self.firing_rates)})
        return row


def _phase_tag(beta):
    if beta == 0.0:
        return PHASE_FREE
    return PHASE_NUDGE_POS if beta > 0 else PHASE_NUDGE_NEG


def _relax_phase(model, x, init_state, phase, target, cfg, rng):
    if cfg.dynamics == 'meanfield':
        return relax_meanfield(model, x, init_state, phase, target)
    fixed_point, _ = relax(model, x, init_state, phase, target, rng.context(_phase_tag(phase.beta)))
    return fixed_point


def _acts(x, fixed_point):
    return [x] + fixed_point.rates


def _estimate_sums(model, x, y, cfg, rng, sign, init_state):
    """Batch sums of the EP gradient, the fixed points that produced them and
    the largest last-step residual of the nudged phases."""
    if init_state is None:
        init_state = NetworkState.zeros(model.topology, x.shape[0])
    free = _relax_phase(model, x, init_state, cfg.free_phase(), None, cfg, rng)
    free_sums = weight_grad_sums(model, _acts(x, free))

    if cfg.bias_mode == 'three_phase':
        pos = _relax_phase(model, x, free.state, cfg.nudge_phase(cfg.beta), y, cfg, rng)
        neg = _relax_phase(model, x, free.state, cfg.nudge_phase(-cfg.beta), y, cfg, rng)
        pos_sums = weight_grad_sums(model, _acts(x, pos))
        neg_sums = weight_grad_sums(model, _acts(x, neg))
        sums = [(p - n) / (2.0 * cfg.beta) for p, n in zip(pos_sums, neg_sums)]
        return sums, cfg.beta, free, pos, max(pos.residual, neg.residual)

    beta = sign * cfg.beta
    nudged = _relax_phase(model, x, free.state, cfg.nudge_phase(beta), y, cfg, rng)
    nudged_sums = weight_grad_sums(model, _acts(x, nudged))
    sums = [(n - f) / beta for n, f in zip(nudged_sums, free_sums)]
    return sums, beta, free, nudged, nudged.residual


def _default_sign(cfg, rng, sign):
    if sign is not None:
        return float(sign)
    if cfg.bias_mode == 'random_sign':
        return batch_sign(rng.root.seed, *rng.root.stream_id)
    return 1.0


def ep_gradient_two_phase(model, x, y, cfg, rng, sign=None, init_state=None):
    """Two-phase EP estimate (1/beta) * (dE/dw(xi^beta) - dE/dw(xi*)), batch mean.

    Args:
        model: LayeredEnergyModel.
        x: input batch.
        y: expanded one-hot targets.
        cfg: TrainConfig.
        rng: SpikeSampler over the batch.
        sign: +1 or -1 for the nudge; drawn from `rng` under random_sign when omitted.
        init_state: free-phase starting state (zeros when omitted).
    """
    x = np.asarray(x, dtype=np.float64)
    sign = _default_sign(cfg, rng, sign)
    two_phase = cfg.model_copy(update={'bias_mode': 'random_sign'})
    sums, beta, free, nudged, residual = _estimate_sums(model, x, y, two_phase, rng, sign, init_state)
    return GradEstimate([s / x.shape[0] for s in sums], beta, free, nudged, residual)


def ep_gradient_three_phase(model, x, y, cfg, rng, init_state=None):
    """Symmetric EP estimate (1/(2 beta)) * (dE/dw(xi^beta) - dE/dw(xi^-beta)), batch mean."""
    x = np.asarray(x, dtype=np.float64)
    three_phase = cfg.model_copy(update={'bias_mode': 'three_phase'})
    sums, beta, free, nudged, residual = _estimate_sums(model, x, y, three_phase, rng, 1.0, init_state)
    return GradEstimate([s / x.shape[0] for s in sums], beta, free, nudged, residual)


def connection_gradient(model, i, rates_pre, rates_post, rates_pre_ref, rates_post_ref, beta):
    """EP update of connection i from the rates of its two adjacent layers only.

    `rates_*` belong to the nudged fixed point, `rates_*_ref` to the reference
    (free or -beta) point; `beta` is the signed divisor, 2 * beta in three-phase mode.
    The result is the batch sum, like weight_grad_sums.
    """
    nudged = -model.connection_grad_sum(i, rates_pre, rates_post)
    reference = -model.connection_grad_sum(i, rates_pre_ref, rates_post_ref)
    return (nudged - reference) / beta


def _shards(batch, shard_size):
    return [np.arange(start, min(start + shard_size, batch)) for start in range(0, batch, shard_size)]


def batch_gradient(model, x, y, cfg, rng, sign=None, init_state=None, executor=None):
    """Batch-mean gradient computed over fixed-size shards, reduced in shard order.

    The shard layout depends only on `cfg.shard_size`, so the result is the
    same for any number of workers.
    """
    x = np.asarray(x, dtype=np.float64)
    sign = _default_sign(cfg, rng, sign)
    if init_state is None:
        init_state = NetworkState.zeros(model.topology, x.shape[0])
    shards = _shards(x.shape[0], cfg.shard_size)

    def run(positions):
        return _estimate_sums(
            model, x[positions], y[positions], cfg, rng.subset(positions), sign, init_state.take(positions),
        )

    results = list(executor.map(run, shards)) if executor is not None else [run(p) for p in shards]

    totals = [np.zeros_like(w) for w in model.params]
    for sums, *_ in results:
        for total, part in zip(totals, sums):
            total += part
    free = _merge_fixed_points([r[2] for r in results], [len(p) for p in shards])
    nudged = _merge_fixed_points([r[3] for r in results], [len(p) for p in shards])
    residual = max(r[4] for r in results)
    return GradEstimate([t / x.shape[0] for t in totals], results[0][1], free, nudged, residual)


def _merge_fixed_points(points, sizes):
    total = float(sum(sizes))
    density = np.zeros(len(points[0].spike_density))
    for point, size in zip(points, sizes):
        density += np.asarray(point.spike_density) * size
    return FixedPoint(
        state=NetworkState.concat([p.state for p in points]),
        rates=[np.concatenate(parts) for parts in zip(*(p.rates for p in points))],
        residual=max(p.residual for p in points),
        spike_density=list(density / total),
        steps_run=points[0].steps_run,
    )


def class_scores(output, n_classes, n_perclass):
    """Per-class sums over the contiguous output groups."""
    output = np.asarray(output, dtype=np.float64)
    return output.reshape(output.shape[0], n_classes, n_perclass).sum(axis=2)


def predict(output, n_classes, n_perclass):
    return np.argmax(class_scores(output, n_classes, n_perclass), axis=1)


def _loss(output, target):
    return 0.5 * np.sum((output - target) ** 2, axis=1)


def _frames_of(dataset):
    """Frame list view of a static or sequence dataset."""
    if hasattr(dataset, 'sequences'):
        return dataset.sequences
    return dataset.images[:, None]


def _run_batches(model, dataset, cfg, rng, epoch, optimizer_state, n_classes, train):
    frames_all = _frames_of(dataset)
    n_frames = frames_all.shape[1]
    stream = STREAM_TRAIN if train else STREAM_EVAL
    shuffle_seed = (cfg.seed, epoch) if train else None

    loss_total = 0.0
    correct = 0
    seen = 0
    density = None
    batch_iter = batches(dataset, cfg.batch_size, shuffle_seed, n_classes, cfg.n_perclass)
    if cfg.progress:
        batch_iter = tqdm(batch_iter, desc=f"{'train' if train else 'eval'} epoch {epoch}", leave=False)

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for batch_idx, batch in enumerate(batch_iter):
            sequence = frames_all[batch.indices]
            batch_size = len(batch.indices)
            state = NetworkState.zeros(model.topology, batch_size)
            summed_output = np.zeros((batch_size, model.topology.n_outputs))
            sign = batch_sign(cfg.seed, epoch, batch_idx)
            try:
                for frame in range(n_frames):
                    x = sequence[:, frame]
                    sampler = SpikeSampler(rng.child(stream, epoch, frame), batch.indices)
                    if train:
                        estimate = batch_gradient(model, x, batch.y, cfg, sampler, sign, state, executor)
                        free, nudged = estimate.free, estimate.nudged
                        model.params = apply_update(model.params, estimate, optimizer_state, cfg)
                    else:
                        free = _free_only(model, x, cfg, sampler, state, executor)
                        nudged = free
                    summed_output += free.state.output
                    loss_total += float(np.sum(_loss(free.state.output, batch.y)))
                    frame_density = np.asarray(free.spike_density) * batch_size
                    density = frame_density if density is None else density + frame_density
                    if cfg.carry_state == 'nudged':
                        state = nudged.state
            except DivergenceError as err:
                logger.error("aborting: %s", err.with_batch(batch_idx))
                raise err.with_batch(batch_idx) from err
            predicted = predict(summed_output, n_classes, cfg.n_perclass)
            correct += int(np.sum(predicted == batch.labels))
            seen += batch_size
            logger.debug("epoch %d batch %d: running accuracy %.4f", epoch, batch_idx, correct / seen)
    finally:
        if executor is not None:
            executor.shutdown()

    if seen == 0:
        raise ContractViolation('dataset produced no batches')
    return EpochMetrics(
        epoch=epoch,
        loss=loss_total / (seen * n_frames),
        accuracy=correct / seen,
        firing_rates=[float(d) for d in density / (seen * n_frames)],
        n_samples=seen,
    )


def _free_only(model, x, cfg, rng, init_state, executor=None):
    shards = _shards(x.shape[0], cfg.shard_size)

    def run(positions):
        return _relax_phase(model, x[positions], init_state.take(positions), cfg.free_phase(), None, cfg,
                            rng.subset(positions))

    points = list(executor.map(run, shards)) if executor is not None else [run(p) for p in shards]
    return _merge_fixed_points(points, [len(p) for p in shards])


def _n_classes(model, cfg):
    outputs = model.topology.n_outputs
    if outputs % cfg.n_perclass:
        raise ContractViolation(f"{outputs} output neurons cannot be split into groups of {cfg.n_perclass}")
    return outputs // cfg.n_perclass


def train_epoch(model, dataset, cfg, rng, optimizer_state=None, epoch=0):
    """One pass over `dataset` with an update after every batch.

    Args:
        model: LayeredEnergyModel; its params are replaced after every update.
        dataset: Dataset with images and labels.
        cfg: TrainConfig.
        rng: RngStream of the run.
        optimizer_state: OptimizerState carried across epochs; created when omitted.
        epoch: epoch counter, part of every stream id.

    Returns:
        EpochMetrics with mean loss at the free fixed points, training accuracy
        and the mean spike density of every layer (input first).
    """
    if optimizer_state is None:
        optimizer_state = init_optimizer_state(model.params, cfg.optimizer)
    metrics = _run_batches(model, dataset, cfg, rng, epoch, optimizer_state, _n_classes(model, cfg), train=True)
    logger.info("epoch %d: loss %.5f, train accuracy %.4f, firing rates %s",
                epoch, metrics.loss, metrics.accuracy, ', '.join(f"{r:.3f}" for r in metrics.firing_rates))
    return metrics


def train_temporal(model, sequence_dataset, cfg, rng, optimizer_state=None, epoch=0):
    """Online training on frame sequences: free, nudge and update at every frame.

    The free phase of frame t+1 starts from the nudged state of frame t
    (`carry_state='nudged'`) or from zeros (`'reset'`). The prediction is the
    class-group argmax of the free-phase outputs summed over all frames.
    """
    if optimizer_state is None:
        optimizer_state = init_optimizer_state(model.params, cfg.optimizer)
    metrics = _run_batches(
        model, sequence_dataset, cfg, rng, epoch, optimizer_state, _n_classes(model, cfg), train=True,
    )
    logger.info("epoch %d (temporal): loss %.5f, train accuracy %.4f", epoch, metrics.loss, metrics.accuracy)
    return metrics


def evaluate(model, dataset, cfg, rng=None, epoch=0):
    """Free-phase accuracy with sampled spikes; works on static and sequence datasets."""
    if rng is None:
        rng = RngStream(cfg.seed)
    return _run_batches(model, dataset, cfg, rng, epoch, None, _n_classes(model, cfg), train=False)
