"""Fixed-point relaxation of the stochastic network.

Every step updates all layers synchronously from the previous step's
activities:

    xi <- (1 - lam) * xi + lam * sigma'(xi) * drive(activities)

where the activities are Bernoulli spikes (`relax`) or firing rates
(`relax_meanfield`). A non-zero beta adds lam * beta * (target - xi_out) to
the output layer.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from config.constants import DIVERGENCE_BOUND
from exceptions import ContractViolation, DivergenceError
from models.neuron import sigma, sigma_prime

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseConfig:
    lam: float
    steps: int
    beta: float = 0.0
    record_traces: bool = False
    record_spikes: bool = False

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ContractViolation(f"lambda must lie in (0, 1], got {self.lam}")
        if self.steps < 1:
            raise ContractViolation(f"a phase needs at least one step, got {self.steps}")

    @property
    def is_free(self):
        return self.beta == 0.0

    @property
    def label(self):
        if self.is_free:
            return 'free'
        return 'nudge' if self.beta > 0 else 'nudge_neg'


@dataclass
class FixedPoint:
    state: object
    rates: list
    residual: float
    spike_density: list = field(default_factory=list)
    steps_run: int = 0


@dataclass
class TraceLog:
    """Per-step recordings of one or more consecutive phases."""
    rows: list = field(default_factory=list)
    states: list = field(default_factory=list)
    spikes: list = field(default_factory=list)
    phase_boundary: int = None
    keep_states: bool = True
    keep_spikes: bool = False

    @property
    def n_steps(self):
        return len(self.states) if self.keep_states else len({row['step'] for row in self.rows})

    def record(self, step, phase, layers, spikes=None):
        for j, xi in enumerate(layers, start=1):
            self.rows.append({
                'step': step,
                'phase': phase,
                'layer': j,
                'mean_xi': float(np.mean(xi)),
                'var_xi': float(np.var(xi)),
                'firing_rate': float(np.mean(spikes[j])) if spikes is not None else float('nan'),
            })
        if self.keep_states:
            self.states.append([xi.copy() for xi in layers])
        if self.keep_spikes and spikes is not None:
            self.spikes.append([s.astype(np.uint8) for s in spikes[1:]])

    def mark_boundary(self):
        if self.phase_boundary is None:
            self.phase_boundary = self.n_steps

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=['step', 'phase', 'layer', 'mean_xi', 'var_xi', 'firing_rate'])
        frame['phase_boundary'] = self.phase_boundary if self.phase_boundary is not None else self.n_steps
        return frame

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def free_steps(self):
        return self.phase_boundary if self.phase_boundary is not None else len(self.states)

    def tail_variance(self, layer=1, window=10):
        """Temporal variance of each neuron's batch-mean potential over the last
        `window` free-phase steps, averaged over neurons."""
        end = self.free_steps()
        start = max(0, end - window)
        stack = np.stack([np.mean(self.states[t][layer - 1], axis=0) for t in range(start, end)])
        return float(np.mean(np.var(stack, axis=0)))

    def trace_residual(self):
        """Max-norm, over layers and neurons, of the change in the batch-mean
        membrane potential at the last free-phase step."""
        end = self.free_steps()
        if end < 2:
            return 0.0
        before, after = self.states[end - 2], self.states[end - 1]
        return float(max(np.max(np.abs(np.mean(a, axis=0) - np.mean(b, axis=0))) for a, b in zip(after, before)))

    def raster_frame(self, layer=1):
        """Spike events (step, sample, neuron) of one layer, in step order."""
        if not self.spikes:
            raise ContractViolation('no spike rasters were recorded; enable record_spikes')
        frames = []
        for step, layers in enumerate(self.spikes):
            spikes = layers[layer - 1]
            sample, neuron = np.nonzero(spikes.reshape(spikes.shape[0], -1))
            frames.append(pd.DataFrame({'step': step, 'layer': layer, 'sample': sample, 'neuron': neuron}))
        return pd.concat(frames, ignore_index=True)

    def heatmap_frame(self, layer=1):
        """Batch-mean membrane potential per neuron and step, long format."""
        means = np.stack([np.mean(s[layer - 1], axis=0).reshape(-1) for s in self.states])
        steps, neurons = np.meshgrid(np.arange(means.shape[0]), np.arange(means.shape[1]), indexing='ij')
        return pd.DataFrame({
            'step': steps.reshape(-1),
            'layer': layer,
            'neuron': neurons.reshape(-1),
            'mean_xi': means.reshape(-1),
        })


def _check_phase(phase, target, n_outputs):
    if phase.is_free:
        return None
    if target is None:
        raise ContractViolation('a nudged phase needs a target')
    target = np.asarray(target, dtype=np.float64)
    if target.shape[-1] != n_outputs:
        raise ContractViolation(f"target has {target.shape[-1]} entries, output layer has {n_outputs}")
    return target


def _euler_step(model, state, acts, phase, target, step):
    drives = model.drives(acts)
    layers = []
    residual = 0.0
    for j, (xi, drive) in enumerate(zip(state.layers, drives), start=1):
        new = (1.0 - phase.lam) * xi + phase.lam * sigma_prime(xi, model.kappa) * drive
        if j == len(state.layers) and target is not None:
            new += phase.lam * phase.beta * (target - xi)
        peak = float(np.max(np.abs(new))) if new.size else 0.0
        if not np.isfinite(peak) or peak > DIVERGENCE_BOUND:
            raise DivergenceError(step, j, peak)
        residual = max(residual, float(np.max(np.abs(new - xi))) if new.size else 0.0)
        layers.append(new)
    return type(state)(layers), residual


def relax(model, x, init_state, phase, target=None, rng=None, trace=None):
    """Relax the stochastic network for `phase.steps` Euler steps.

    Args:
        model: LayeredEnergyModel.
        x: input batch in [0, 1], clamped and re-sampled as spikes every step.
        init_state: NetworkState to start from.
        phase: PhaseConfig; beta != 0 nudges the output towards `target`.
        target: expanded one-hot targets, required when beta != 0.
        rng: SpikeSampler whose context identifies this phase.
        trace: TraceLog to append to; a new one is created when omitted.

    Returns:
        (FixedPoint, TraceLog)
    """
    x = np.asarray(x, dtype=np.float64)
    model.check_state(x, init_state)
    target = _check_phase(phase, target, model.topology.n_outputs)
    if trace is None:
        trace = TraceLog()
    if phase.record_spikes:
        trace.keep_spikes = True
    if not phase.is_free:
        trace.mark_boundary()
    step0 = trace.n_steps

    state = init_state.copy()
    residual = 0.0
    totals = np.zeros(len(state.layers) + 1)
    for step in range(phase.steps):
        acts = [rng.sample(x, 0, step)]
        acts += [rng.sample(sigma(xi, model.kappa), j, step) for j, xi in enumerate(state.layers, start=1)]
        totals += [float(np.mean(a)) for a in acts]
        state, residual = _euler_step(model, state, acts, phase, target, step0 + step)
        if phase.record_traces or phase.record_spikes:
            trace.record(step0 + step, phase.label, state.layers, acts)

    fixed_point = FixedPoint(
        state=state,
        rates=[sigma(xi, model.kappa) for xi in state.layers],
        residual=residual,
        spike_density=list(totals / phase.steps),
        steps_run=phase.steps,
    )
    return fixed_point, trace


def relax_meanfield(model, x, init_state, phase, target=None, tol=None):
    """Deterministic rate dynamics: spikes replaced by their firing probabilities.

    With `tol`, iteration stops as soon as the step residual drops to `tol`.
    """
    x = np.asarray(x, dtype=np.float64)
    model.check_state(x, init_state)
    target = _check_phase(phase, target, model.topology.n_outputs)

    state = init_state.copy()
    residual = 0.0
    steps_run = 0
    for step in range(phase.steps):
        acts = [x] + [sigma(xi, model.kappa) for xi in state.layers]
        state, residual = _euler_step(model, state, acts, phase, target, step)
        steps_run = step + 1
        if tol is not None and residual <= tol:
            break

    rates = [sigma(xi, model.kappa) for xi in state.layers]
    return FixedPoint(
        state=state,
        rates=rates,
        residual=residual,
        spike_density=[float(np.mean(x))] + [float(np.mean(r)) for r in rates],
        steps_run=steps_run,
    )


def stability_report(traces, labels):
    """Concatenate per-model trace frames for heatmap plotting."""
    lengths = {trace.n_steps for trace in traces}
    if len(lengths) > 1:
        raise ContractViolation(f"traces cover different step counts: {sorted(lengths)}")
    frames = []
    for trace, label in zip(traces, labels):
        frame = trace.to_frame()
        frame.insert(0, 'model', label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def stability_summary(traces, labels, layer=1, window=10):
    return pd.DataFrame({
        'model': list(labels),
        'tail_variance': [trace.tail_variance(layer, window) for trace in traces],
        'trace_residual': [trace.trace_residual() for trace in traces],
    })
