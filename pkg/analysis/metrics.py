"""Operation counting, energy estimates and firing-density diagnostics.

Per connection i (layer i -> layer i+1) a full-precision network performs

    conv:  C_in * K * K * C_out * O_H * O_W   multiply-accumulates
    dense: I_F * O_F                           multiply-accumulates

and the spiking network performs IFR_i times as many accumulates, IFR_i being
the spike density of the presynaptic layer. Bidirectional counts double both.
Counts are per relaxation step on both sides of every ratio.
"""
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.constants import (
    ENERGY_PER_AC,
    ENERGY_PER_MAC,
    PHASE_FREE,
    PHASE_NUDGE_POS,
    PREDCODING_ADDITIONS_PER_NEURON,
    PREDCODING_MEMORY_PER_NEURON,
    PREDCODING_MULTIPLIES_PER_NEURON,
    STREAM_SWEEP,
)
from data.batching import batches
from exceptions import ContractViolation, UndefinedRatioError
from models.dynamics import relax
from models.network import NetworkState
from models.rng import SpikeSampler
from models.topology import DenseSpec
from training.trainer import ep_gradient_two_phase, evaluate, predict

logger = logging.getLogger(__name__)


class CostModel(BaseModel):
    """Energy per operation in pJ."""
    model_config = ConfigDict(frozen=True)

    energy_per_ac: float = Field(default=ENERGY_PER_AC, gt=0)
    energy_per_mac: float = Field(default=ENERGY_PER_MAC, gt=0)


class FiringStats(BaseModel):
    """Mean spike density of the presynaptic layer of every connection."""
    model_config = ConfigDict(frozen=True)

    rates: tuple[float, ...]
    n_samples: int = Field(default=0, ge=0)

    @field_validator('rates')
    @classmethod
    def _in_unit_interval(cls, value):
        if any(not 0.0 <= r <= 1.0 for r in value):
            raise ValueError(f"firing rates must lie in [0, 1], got {value}")
        return value

    @classmethod
    def from_density(cls, density, n_samples=0):
        """Drop the output layer from a per-layer density list (input first)."""
        return cls(rates=tuple(float(d) for d in list(density)[:-1]), n_samples=n_samples)


def mac_count_fp(topology, bidirectional=False):
    """Multiply-accumulates per connection of a full-precision network."""
    shapes = topology.layer_shapes()
    conv_shapes = topology.conv_output_shapes()
    counts = []
    for i, spec in enumerate(topology.layers):
        if isinstance(spec, DenseSpec):
            count = int(np.prod(shapes[i])) * spec.units
        else:
            c_out, o_h, o_w = conv_shapes[i]
            count = shapes[i][0] * spec.kernel * spec.kernel * c_out * o_h * o_w
        counts.append(2 * count if bidirectional else count)
    return counts


def ac_count_snn(topology, stats, bidirectional=False):
    macs = mac_count_fp(topology, bidirectional)
    if len(stats.rates) != len(macs):
        raise ContractViolation(f"firing stats cover {len(stats.rates)} connections, topology has {len(macs)}")
    return [rate * mac for rate, mac in zip(stats.rates, macs)]


def energy_ratio(topology_snn, topology_fp, stats, cost=CostModel(), bidirectional=True):
    """Energy of the full-precision network divided by that of the spiking one."""
    fp_energy = sum(mac_count_fp(topology_fp, bidirectional)) * cost.energy_per_mac
    snn_energy = sum(ac_count_snn(topology_snn, stats, bidirectional)) * cost.energy_per_ac
    if snn_energy == 0.0:
        raise UndefinedRatioError('spiking network performs no accumulates; energy ratio is undefined')
    return fp_energy / snn_energy


def cost_report(topology_snn, stats, cost=CostModel(), bidirectional=True):
    """Per-connection table with columns layer, mac, ac, ifr, energy_pj."""
    macs = mac_count_fp(topology_snn, bidirectional)
    acs = ac_count_snn(topology_snn, stats, bidirectional)
    return pd.DataFrame({
        'layer': np.arange(1, len(macs) + 1),
        'mac': macs,
        'ac': acs,
        'ifr': list(stats.rates),
        'energy_pj': [ac * cost.energy_per_ac for ac in acs],
    })


def cost_summary(topology_snn, topology_fp, stats, cost=CostModel(), bidirectional=True):
    return {
        'mac_fp_total': sum(mac_count_fp(topology_fp, bidirectional)),
        'ac_snn_total': sum(ac_count_snn(topology_snn, stats, bidirectional)),
        'energy_fp_pj': sum(mac_count_fp(topology_fp, bidirectional)) * cost.energy_per_mac,
        'energy_snn_pj': sum(ac_count_snn(topology_snn, stats, bidirectional)) * cost.energy_per_ac,
        'ratio': energy_ratio(topology_snn, topology_fp, stats, cost, bidirectional),
    }


def predcoding_overhead(topology):
    """Extra per-step work of predictive-coding neurons, per non-input layer."""
    neurons = topology.neuron_counts()
    return pd.DataFrame({
        'layer': np.arange(1, len(neurons) + 1),
        'neurons': neurons,
        'multiplies': [PREDCODING_MULTIPLIES_PER_NEURON * n for n in neurons],
        'additions': [PREDCODING_ADDITIONS_PER_NEURON * n for n in neurons],
        'memory': [PREDCODING_MEMORY_PER_NEURON * n for n in neurons],
    })


def measure_firing_stats(model, dataset, cfg, rng, epoch=0):
    """FiringStats from the spike densities of a free-phase pass over `dataset`."""
    metrics = evaluate(model, dataset, cfg, rng, epoch)
    return FiringStats.from_density(metrics.firing_rates, metrics.n_samples)


def _hidden_density(spike_density):
    hidden = spike_density[1:-1] or spike_density[-1:]
    return float(np.mean(hidden))


def phase_density(model, x, y, cfg, sampler):
    """Hidden-layer spike density over one free and one nudge phase."""
    init = NetworkState.zeros(model.topology, x.shape[0])
    free, _ = relax(model, x, init, cfg.free_phase(), None, sampler.context(PHASE_FREE))
    nudged, _ = relax(model, x, free.state, cfg.nudge_phase(cfg.beta), y, sampler.context(PHASE_NUDGE_POS))
    total = cfg.t_free + cfg.t_nudge
    return (cfg.t_free * _hidden_density(free.spike_density)
            + cfg.t_nudge * _hidden_density(nudged.spike_density)) / total


def kappa_sweep(model_factory, kappas, dataset, cfg, rng):
    """Mean hidden-layer spike density for every kappa.

    Args:
        model_factory: callable kappa -> LayeredEnergyModel.
        kappas: non-empty sequence of gains; kappa = 0 silences the network.
        dataset: samples to relax on.
        cfg: TrainConfig supplying phase lengths, beta and batch size.
        rng: RngStream of the run.

    Returns:
        DataFrame with columns kappa, density.
    """
    if not len(kappas):
        raise ContractViolation('kappa sweep needs at least one kappa')
    rows = []
    for kappa in kappas:
        if kappa == 0:
            rows.append({'kappa': 0.0, 'density': 0.0})
            continue
        model = model_factory(kappa)
        weighted = 0.0
        count = 0
        for batch in batches(dataset, cfg.batch_size, None, dataset.n_classes, cfg.n_perclass):
            sampler = SpikeSampler(rng.child(STREAM_SWEEP), batch.indices)
            weighted += phase_density(model, batch.x, batch.y, cfg, sampler) * len(batch.indices)
            count += len(batch.indices)
        rows.append({'kappa': float(kappa), 'density': weighted / count})
        logger.info("kappa %.2f: hidden spike density %.4f", kappa, rows[-1]['density'])
    return pd.DataFrame(rows, columns=['kappa', 'density'])


def error_signal_stats(free_output, nudged_output, wrong, tol=1e-12):
    """Output error signal |xi^beta_out - xi*_out| on the samples flagged `wrong`.

    Returns the per-sample summed magnitude, the mean magnitude per output
    neuron, and the fraction of entries above `tol`.
    """
    diff = np.abs(np.asarray(nudged_output) - np.asarray(free_output))
    wrong = np.asarray(wrong, dtype=bool)
    if not np.any(wrong):
        return {'summed_magnitude': 0.0, 'mean_magnitude': 0.0, 'nonzero_fraction': 0.0, 'n_wrong': 0}
    selected = diff[wrong]
    return {
        'summed_magnitude': float(np.mean(np.sum(selected, axis=1))),
        'mean_magnitude': float(np.mean(selected)),
        'nonzero_fraction': float(np.mean(selected > tol)),
        'n_wrong': int(np.sum(wrong)),
    }


def inflation_sweep(model_factory, perclass_values, dataset, cfg, rng):
    """Error-signal statistics on wrongly predicted samples for every N_perclass.

    `model_factory(n_perclass)` returns a model whose output layer has
    n_classes * n_perclass neurons.
    """
    rows = []
    for n_perclass in perclass_values:
        model = model_factory(n_perclass)
        run_cfg = cfg.model_copy(update={'n_perclass': n_perclass})
        free_out, nudged_out, wrong = [], [], []
        for batch in batches(dataset, run_cfg.batch_size, None, dataset.n_classes, n_perclass):
            sampler = SpikeSampler(rng.child(STREAM_SWEEP, n_perclass), batch.indices)
            estimate = ep_gradient_two_phase(model, batch.x, batch.y, run_cfg, sampler, sign=1.0)
            free_out.append(estimate.free.state.output)
            nudged_out.append(estimate.nudged.state.output)
            wrong.append(predict(estimate.free.state.output, dataset.n_classes, n_perclass) != batch.labels)
        stats = error_signal_stats(np.concatenate(free_out), np.concatenate(nudged_out), np.concatenate(wrong))
        rows.append({'n_perclass': n_perclass, **stats})
    return pd.DataFrame(rows)
