from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from pydantic import ValidationError

from data.synthetic import SequenceDataset, make_moving_bar, make_random_dataset
from exceptions import DimensionError, DivergenceError, NonFiniteGradientError
from models.dynamics import relax_meanfield
from models.network import LayeredEnergyModel, NetworkState
from models.rng import RngStream, SpikeSampler
from models.topology import build_topology
from training.optimizers import apply_update, init_optimizer_state
from training.trainer import (
    TrainConfig,
    batch_gradient,
    class_scores,
    connection_gradient,
    ep_gradient_three_phase,
    ep_gradient_two_phase,
    evaluate,
    predict,
    train_epoch,
    train_temporal,
)


def clone(model):
    return LayeredEnergyModel(model.topology, [w.copy() for w in model.params], model.kappa)


def sampler_for(batch, seed=0):
    return SpikeSampler(RngStream(seed).child(0, 0, 0), np.arange(batch))


@pytest.fixture
def random_data():
    return make_random_dataset(8, (1, 2, 2), n_classes=4, seed=0)


class TestTrainConfig:
    def test_lambda_alias(self):
        cfg = TrainConfig(**{'lambda': 0.5, 't_free': 60, 't_nudge': 15, 'beta': 0.75, 'kappa': 2,
                             'learning_rate': 3e-3})
        assert cfg.lam == 0.5
        assert cfg.free_phase().steps == 60
        assert cfg.nudge_phase(-0.75).label == 'nudge_neg'

    def test_rejects_unknown_keys(self, make_cfg):
        with pytest.raises(ValidationError):
            make_cfg(momentum=0.9)

    @pytest.mark.parametrize('field, value', [('lam', 0.0), ('lam', 1.5), ('beta', 0.0), ('kappa', -1.0)])
    def test_rejects_out_of_range(self, make_cfg, field, value):
        with pytest.raises(ValidationError):
            make_cfg(**{field: value})


class TestEstimators:
    def test_zero_output_error_gives_zero_gradient(self, toy_model, toy_batch, make_cfg):
        x, _ = toy_batch
        cfg = make_cfg(dynamics='meanfield', t_free=2000, t_nudge=200)
        free = relax_meanfield(toy_model, x, NetworkState.zeros(toy_model.topology, x.shape[0]), cfg.free_phase())
        y = free.state.output.copy()
        sampler = sampler_for(x.shape[0])
        for estimate in (ep_gradient_two_phase(toy_model, x, y, cfg, sampler, sign=1.0),
                         ep_gradient_three_phase(toy_model, x, y, cfg, sampler)):
            for grad in estimate.grads:
                np.testing.assert_allclose(grad, 0.0, atol=1e-10)

    def test_paired_signs_average_to_three_phase(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(beta=0.5, t_free=30, t_nudge=10)
        sampler = sampler_for(x.shape[0], seed=5)
        plus = ep_gradient_two_phase(toy_model, x, y, cfg, sampler, sign=1.0)
        minus = ep_gradient_two_phase(toy_model, x, y, cfg, sampler, sign=-1.0)
        three = ep_gradient_three_phase(toy_model, x, y, cfg, sampler)
        assert plus.beta_used == 0.5 and minus.beta_used == -0.5
        for p, m, t in zip(plus.grads, minus.grads, three.grads):
            np.testing.assert_allclose(0.5 * (p + m), t, rtol=0, atol=1e-12)

    def test_update_is_local_to_adjacent_layers(self, mixed_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(kappa=1.0, t_free=30, t_nudge=10)
        estimate = ep_gradient_two_phase(mixed_model, x, y, cfg, sampler_for(x.shape[0]), sign=1.0)
        nudged = [x] + estimate.nudged.rates
        free = [x] + estimate.free.rates
        for i in range(mixed_model.topology.n_connections):
            local = connection_gradient(mixed_model, i, nudged[i], nudged[i + 1], free[i], free[i + 1],
                                        estimate.beta_used) / x.shape[0]
            np.testing.assert_array_equal(local, estimate.grads[i])

    def test_conv_estimate_shapes(self, conv_model, make_cfg):
        x = np.random.default_rng(0).random((2, 2, 8, 8))
        y = np.repeat(np.eye(2)[[0, 1]], 2, axis=1)
        cfg = make_cfg(kappa=1.0, t_free=10, t_nudge=5, n_perclass=2)
        estimate = ep_gradient_three_phase(conv_model, x, y, cfg, sampler_for(2))
        assert [g.shape for g in estimate.grads] == [w.shape for w in conv_model.params]
        assert all(np.all(np.isfinite(g)) for g in estimate.grads)

    def test_two_and_three_phase_agree_at_small_beta(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(dynamics='meanfield', beta=0.01, t_free=500, t_nudge=500)
        sampler = sampler_for(x.shape[0])
        two = ep_gradient_two_phase(toy_model, x, y, cfg, sampler, sign=1.0)
        three = ep_gradient_three_phase(toy_model, x, y, cfg, sampler)
        for a, b in zip(two.grads, three.grads):
            assert np.linalg.norm(a - b) <= 0.05 * np.linalg.norm(b)

    def test_nudge_residual_of_settled_phases(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(dynamics='meanfield', beta=0.01, t_free=500, t_nudge=500)
        estimate = ep_gradient_three_phase(toy_model, x, y, cfg, sampler_for(x.shape[0]))
        assert estimate.free.residual <= 1e-11
        assert estimate.nudge_residual <= 1e-11

    def test_nudge_residual_flags_oscillation_at_the_kink(self, kink_model, make_cfg):
        one = np.ones((1, 1))
        cfg = make_cfg(dynamics='meanfield', beta=0.01, t_free=500, t_nudge=500)
        estimate = ep_gradient_three_phase(kink_model, one, one, cfg, sampler_for(1))
        assert estimate.free.residual <= 1e-11
        # every step either leaves xi_out < 0 (sigma' = 0) or re-enters the band
        assert estimate.nudge_residual >= 0.005
        two_phase = ep_gradient_two_phase(kink_model, one, one, cfg, sampler_for(1), sign=1.0)
        assert two_phase.nudge_residual >= 0.005

    def test_random_sign_is_drawn_per_batch(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(t_free=5, t_nudge=5)
        signs = {ep_gradient_two_phase(toy_model, x, y, cfg, SpikeSampler(RngStream(0).child(0, b, 0),
                                                                          np.arange(3))).beta_used
                 for b in range(32)}
        assert signs == {0.1, -0.1}

    def test_sharding_is_worker_invariant(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(shard_size=1, t_free=20, t_nudge=5)
        sampler = sampler_for(x.shape[0], seed=9)
        serial = batch_gradient(toy_model, x, y, cfg, sampler, sign=1.0)
        with ThreadPoolExecutor(max_workers=3) as executor:
            parallel = batch_gradient(toy_model, x, y, cfg, sampler, sign=1.0, executor=executor)
        for a, b in zip(serial.grads, parallel.grads):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(serial.free.state.output, parallel.free.state.output)

    def test_single_shard_matches_direct_estimate(self, toy_model, toy_batch, make_cfg):
        x, y = toy_batch
        cfg = make_cfg(shard_size=8, t_free=20, t_nudge=5)
        sampler = sampler_for(x.shape[0], seed=2)
        sharded = batch_gradient(toy_model, x, y, cfg, sampler, sign=-1.0)
        direct = ep_gradient_two_phase(toy_model, x, y, cfg, sampler, sign=-1.0)
        for a, b in zip(sharded.grads, direct.grads):
            np.testing.assert_array_equal(a, b)


class TestOptimizers:
    def test_zero_gradient_leaves_params(self, make_cfg):
        params = [np.array([[1.0, -2.0]])]
        for kind in ('sgd', 'adamw'):
            state = init_optimizer_state(params, kind)
            out = apply_update(params, [np.zeros((1, 2))], state, make_cfg(optimizer=kind))
            np.testing.assert_array_equal(out[0], params[0])
            assert state.step == 1

    def test_sgd_arithmetic(self, make_cfg):
        params = [np.array([[1.0, 2.0]])]
        grad = [np.array([[0.5, -1.0]])]
        out = apply_update(params, grad, init_optimizer_state(params, 'sgd'), make_cfg(learning_rate=3e-3))
        np.testing.assert_allclose(out[0], [[0.9985, 2.003]], rtol=0, atol=1e-15)

    def test_adaptive_step_approaches_learning_rate(self, make_cfg):
        cfg = make_cfg(optimizer='adamw', learning_rate=0.01)
        params = [np.array([0.0, 0.0])]
        grad = [np.array([0.3, -2.0])]
        state = init_optimizer_state(params, 'adamw')
        for _ in range(200):
            previous = params
            params = apply_update(params, grad, state, cfg)
        np.testing.assert_allclose(params[0] - previous[0], [-0.01, 0.01], rtol=1e-6)

    def test_decoupled_weight_decay(self, make_cfg):
        cfg = make_cfg(optimizer='adamw', learning_rate=0.01, weight_decay=0.1)
        params = [np.array([2.0, -4.0])]
        out = apply_update(params, [np.zeros(2)], init_optimizer_state(params, 'adamw'), cfg)
        np.testing.assert_allclose(out[0], params[0] * (1 - 0.01 * 0.1), rtol=1e-15)

    def test_rejects_non_finite(self, make_cfg):
        params = [np.zeros(2)]
        with pytest.raises(NonFiniteGradientError):
            apply_update(params, [np.array([np.nan, 0.0])], init_optimizer_state(params, 'sgd'), make_cfg())

    def test_rejects_shape_mismatch(self, make_cfg):
        params = [np.zeros(2)]
        with pytest.raises(DimensionError):
            apply_update(params, [np.zeros(3)], init_optimizer_state(params, 'sgd'), make_cfg())

    def test_unknown_optimizer(self):
        with pytest.raises(ValueError):
            init_optimizer_state([np.zeros(2)], 'rmsprop')


def test_class_group_prediction():
    output = np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [9.0, 9.0, 0.0, 0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(class_scores(output, 3, 2), [[3.0, 7.0, 11.0], [18.0, 0.0, 2.0]])
    np.testing.assert_array_equal(predict(output, 3, 2), [2, 0])


class TestTraining:
    def test_zero_learning_rate_keeps_model(self, toy_model, random_data, make_cfg):
        cfg = make_cfg(learning_rate=0.0, batch_size=4, t_free=20, t_nudge=5)
        model = clone(toy_model)
        before = evaluate(model, random_data, cfg)
        metrics = train_epoch(model, random_data, cfg, RngStream(cfg.seed))
        for a, b in zip(model.params, toy_model.params):
            np.testing.assert_array_equal(a, b)
        assert evaluate(model, random_data, cfg).accuracy == before.accuracy
        assert metrics.n_samples == 8
        assert len(metrics.firing_rates) == 3

    def test_metrics_row(self, toy_model, random_data, make_cfg):
        cfg = make_cfg(batch_size=4, t_free=10, t_nudge=5)
        metrics = train_epoch(clone(toy_model), random_data, cfg, RngStream(cfg.seed), epoch=2)
        row = metrics.as_row()
        assert list(row) == ['epoch', 'loss', 'accuracy', 'ifr_0', 'ifr_1', 'ifr_2']
        assert row['epoch'] == 2
        assert 0.0 <= row['accuracy'] <= 1.0

    def test_identical_across_worker_counts(self, toy_model, random_data, make_cfg):
        results = []
        for workers in (1, 3):
            cfg = make_cfg(batch_size=4, t_free=15, t_nudge=5, workers=workers, shard_size=1)
            model = clone(toy_model)
            metrics = train_epoch(model, random_data, cfg, RngStream(cfg.seed))
            results.append((model.params, metrics.as_row()))
        for a, b in zip(results[0][0], results[1][0]):
            np.testing.assert_array_equal(a, b)
        assert results[0][1] == results[1][1]

    def test_single_frame_sequence_matches_static_training(self, toy_model, random_data, make_cfg):
        cfg = make_cfg(batch_size=4, t_free=15, t_nudge=5)
        static_model, temporal_model = clone(toy_model), clone(toy_model)
        sequences = SequenceDataset(random_data.images[:, None], random_data.labels, n_classes=4)
        static = train_epoch(static_model, random_data, cfg, RngStream(cfg.seed))
        temporal = train_temporal(temporal_model, sequences, cfg, RngStream(cfg.seed))
        for a, b in zip(static_model.params, temporal_model.params):
            np.testing.assert_array_equal(a, b)
        assert static.as_row() == temporal.as_row()

    def test_carry_over_changes_temporal_training(self, make_cfg):
        topology = build_topology((2, 6, 6), ['fc6'], n_classes=2)
        base = LayeredEnergyModel.initialise(topology, kappa=1.0, seed=0, gain=0.5)
        data = make_moving_bar(4, frames=3, size=6, seed=0)
        params = {}
        for mode in ('nudged', 'reset'):
            cfg = make_cfg(kappa=1.0, batch_size=2, t_free=10, t_nudge=5, carry_state=mode)
            model = clone(base)
            train_temporal(model, data, cfg, RngStream(cfg.seed))
            params[mode] = model.params
        assert any(not np.array_equal(a, b) for a, b in zip(params['nudged'], params['reset']))

    def test_divergence_names_the_batch(self, toy_model, random_data, make_cfg):
        model = toy_model.with_params([np.full_like(w, 1e4) for w in toy_model.params])
        cfg = make_cfg(batch_size=4, t_free=20, t_nudge=5)
        with pytest.raises(DivergenceError) as info:
            train_epoch(model, random_data, cfg, RngStream(cfg.seed))
        assert info.value.batch_index == 0

    @pytest.mark.slow
    def test_moving_bar_is_learned(self):
        topology = build_topology((2, 8, 8), ['conv4:3:1:1'], n_classes=2, n_perclass=5)
        model = LayeredEnergyModel.initialise(topology, kappa=1.0, seed=0)
        cfg = TrainConfig(lam=0.5, t_free=30, t_nudge=10, beta=0.5, kappa=1.0, n_perclass=5,
                          learning_rate=0.05, batch_size=8, epochs=20)
        train = make_moving_bar(200, frames=5, size=8, seed=0)
        test = make_moving_bar(100, frames=5, size=8, seed=1)
        rng = RngStream(cfg.seed)
        optimizer_state = init_optimizer_state(model.params, cfg.optimizer)
        for epoch in range(cfg.epochs):
            train_temporal(model, train, cfg, rng, optimizer_state, epoch)
        assert evaluate(model, test, cfg, rng).accuracy >= 0.8
