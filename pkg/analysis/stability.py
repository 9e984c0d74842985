"""Membrane-stability comparison of the stochastic network and three deterministic LIF networks.

All four variants share the weights of one LayeredEnergyModel and run a free
phase of `t_free` steps followed by a nudge phase of `t_nudge` steps. Each
returns a TraceLog of per-neuron potentials:

    stochastic      xi of the Bernoulli spiking network
    lif_lowpass     leaky membrane v <- decay * v + drive, hard reset at threshold
    lif_predictive  predictive-coding neurons (decoder / encoder around xi)
    lif_schedule    sigma-delta spiking with a shrinking step size
"""
import logging

import numpy as np

from config.constants import (
    PHASE_FREE,
    PHASE_NUDGE_POS,
    PREDCODING_ALPHA,
    PREDCODING_THRESHOLD,
    SCHEDULE_DECAY,
    SCHEDULE_MIN_STEP,
    STREAM_STABILITY,
)
from models.dynamics import TraceLog, relax, stability_report, stability_summary
from models.network import NetworkState
from models.neuron import (
    LifBaselineState,
    LowpassConfig,
    LowpassState,
    ScheduleState,
    lif_lowpass_step,
    lif_predcoding_step,
    lif_schedule_step,
)
from models.rng import RngStream, SpikeSampler

logger = logging.getLogger(__name__)

STABILITY_MODELS = ('stochastic', 'lif_lowpass', 'lif_predictive', 'lif_schedule')


def run_stochastic(model, x, target, cfg, seed, spike_rasters=False):
    sampler = SpikeSampler(RngStream(seed).child(STREAM_STABILITY, 0, 0), np.arange(x.shape[0]))
    state = NetworkState.zeros(model.topology, x.shape[0])
    free_phase = cfg.free_phase(record_traces=True, record_spikes=spike_rasters)
    free, trace = relax(model, x, state, free_phase, None, sampler.context(PHASE_FREE))
    nudge_phase = cfg.nudge_phase(cfg.beta, record_traces=True, record_spikes=spike_rasters)
    _, trace = relax(model, x, free.state, nudge_phase, target, sampler.context(PHASE_NUDGE_POS), trace)
    return trace


def _baseline_loop(model, x, target, cfg, init_layer, step_layer):
    """Drive a deterministic spiking network through a free and a nudge phase.

    `init_layer(shape)` builds a layer state; `step_layer(layer_state, drive)`
    returns (layer_state, spikes, membrane). The input is clamped to x.
    """
    shapes = [(x.shape[0],) + shape for shape in model.layer_shapes[1:]]
    layers = [init_layer(shape) for shape in shapes]
    spikes = [np.zeros(shape) for shape in shapes]
    trace = TraceLog()
    step = 0
    for phase, steps, beta in (('free', cfg.t_free, 0.0), ('nudge', cfg.t_nudge, cfg.beta)):
        if beta:
            trace.mark_boundary()
        for _ in range(steps):
            drives = model.drives([x] + spikes)
            membranes = []
            new_spikes = []
            for j, (layer, drive) in enumerate(zip(layers, drives)):
                if beta and j == len(layers) - 1:
                    drive = drive + beta * (target - _membrane_of(layer))
                layer, out, membrane = step_layer(layer, drive)
                layers[j] = layer
                new_spikes.append(out)
                membranes.append(membrane)
            spikes = new_spikes
            trace.record(step, phase, membranes, [x] + spikes)
            step += 1
    return trace


def _membrane_of(layer):
    return layer.v if isinstance(layer, LowpassState) else layer.xi


def run_lowpass(model, x, target, cfg, config=LowpassConfig()):
    def step_layer(layer, drive):
        # lif_lowpass_step averages its input; rescale so v accumulates the raw drive
        layer, out = lif_lowpass_step(layer, drive / (1.0 - config.decay), config)
        return layer, out, layer.v

    return _baseline_loop(model, x, target, cfg, lambda shape: LowpassState(np.zeros(shape)), step_layer)


def run_predictive(model, x, target, cfg, alpha=PREDCODING_ALPHA, v_th=PREDCODING_THRESHOLD):
    def step_layer(layer, drive):
        layer, out = lif_predcoding_step(layer, drive, cfg.lam)
        return layer, out, layer.xi

    return _baseline_loop(
        model, x, target, cfg,
        lambda shape: LifBaselineState.zeros(shape, alpha, v_th, cfg.kappa), step_layer,
    )


def run_schedule(model, x, target, cfg, v_th=PREDCODING_THRESHOLD,
                 decay=SCHEDULE_DECAY, min_step=SCHEDULE_MIN_STEP):
    def step_layer(layer, drive):
        layer, out = lif_schedule_step(layer, drive, cfg.lam, cfg.kappa, v_th, decay, min_step)
        return layer, out, layer.xi

    return _baseline_loop(
        model, x, target, cfg, lambda shape: ScheduleState(np.zeros(shape), np.zeros(shape)), step_layer,
    )


def stability_traces(model, x, target, cfg, seed, spike_rasters=False):
    """TraceLogs of all four variants, keyed by STABILITY_MODELS labels.

    With `spike_rasters` the stochastic trace also keeps its per-step spikes.
    """
    x = np.asarray(x, dtype=np.float64)
    model = model.with_kappa(cfg.kappa)
    traces = {
        'stochastic': run_stochastic(model, x, target, cfg, seed, spike_rasters),
        'lif_lowpass': run_lowpass(model, x, target, cfg),
        'lif_predictive': run_predictive(model, x, target, cfg),
        'lif_schedule': run_schedule(model, x, target, cfg),
    }
    for label, trace in traces.items():
        logger.debug("%s: tail variance %.3g", label, trace.tail_variance())
    return traces


def compare_stability(traces, layer=1, window=10):
    """(long-format report, per-model summary) for a dict of TraceLogs."""
    labels = list(traces)
    logs = [traces[label] for label in labels]
    return stability_report(logs, labels), stability_summary(logs, labels, layer, window)
