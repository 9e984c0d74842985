import numpy as np
import pytest

from analysis.stability import STABILITY_MODELS, compare_stability, run_lowpass, run_stochastic, stability_traces
from models.network import LayeredEnergyModel
from models.topology import build_topology


@pytest.fixture
def constant_drive_model():
    """Every hidden unit sees the same constant drive when the input is all ones."""
    topology = build_topology((4,), ['fc8'], n_classes=2)
    return LayeredEnergyModel(topology, [np.full((4, 8), 0.05), np.full((8, 2), 0.01)], kappa=2.0)


@pytest.fixture
def stability_inputs(make_cfg):
    x = np.ones((5, 4))
    target = np.eye(2)[[0, 1, 0, 1, 0]]
    cfg = make_cfg(lam=0.5, t_free=40, t_nudge=10, beta=0.5, kappa=2.0)
    return x, target, cfg


@pytest.fixture
def traces(constant_drive_model, stability_inputs):
    return stability_traces(constant_drive_model, *stability_inputs, seed=0)


def test_all_variants_share_the_schedule(traces):
    assert list(traces) == list(STABILITY_MODELS)
    for trace in traces.values():
        assert trace.n_steps == 50
        assert trace.free_steps() == 40


def test_stochastic_variance_below_lowpass(traces):
    _, summary = compare_stability(traces, layer=1, window=10)
    summary = summary.set_index('model')
    assert summary.loc['stochastic', 'tail_variance'] < summary.loc['lif_lowpass', 'tail_variance']


def test_stochastic_potentials_settle(make_cfg):
    topology = build_topology((16,), ['fc12'], n_classes=4)
    rng = np.random.default_rng(5)
    model = LayeredEnergyModel(topology, [rng.uniform(-0.03, 0.03, size=s) for s in topology.weight_shapes()], 2.0)
    x = np.full((200, 16), 0.5)
    target = np.eye(4)[np.arange(200) % 4]
    cfg = make_cfg(lam=0.5, t_free=40, t_nudge=10, beta=0.5, kappa=2.0)
    trace = run_stochastic(model, x, target, cfg, seed=1)
    assert trace.free_steps() == 40
    assert 0.0 < trace.trace_residual() <= 0.05


def test_lowpass_membrane_is_a_sawtooth(constant_drive_model, stability_inputs):
    trace = run_lowpass(constant_drive_model, *stability_inputs)
    hidden = [float(np.mean(trace.states[t][0])) for t in range(40)]
    resets = [t for t, v in enumerate(hidden) if v == 0.0]
    assert resets[:3] == [6, 13, 20]
    assert trace.tail_variance(layer=1, window=10) > 0.05


def test_stochastic_trace_is_reproducible(constant_drive_model, stability_inputs):
    a = run_stochastic(constant_drive_model, *stability_inputs, seed=4).to_frame()
    b = run_stochastic(constant_drive_model, *stability_inputs, seed=4).to_frame()
    assert a.equals(b)


def test_report_layout(traces):
    report, summary = compare_stability(traces, layer=1, window=10)
    assert report.columns[0] == 'model'
    assert len(report) == 4 * 50 * 2
    assert set(report['model']) == set(STABILITY_MODELS)
    assert list(summary['model']) == list(STABILITY_MODELS)
    assert np.all(np.isfinite(summary['tail_variance']))
