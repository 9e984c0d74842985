import numpy as np
import pytest

from exceptions import OracleUnavailableError
from models.rng import RngStream, SpikeSampler
from training.optimizers import apply_update, init_optimizer_state
from training.oracle import (
    OracleConfig,
    cosine_similarity,
    fd_gradient,
    free_fixed_point,
    loss_at_fixed_point,
    per_connection_cosine,
)
from training.trainer import ep_gradient_three_phase


def flat(grads):
    return np.concatenate([g.reshape(-1) for g in grads])


@pytest.fixture
def ocfg():
    return OracleConfig()


@pytest.fixture
def reference(toy_model, toy_batch, ocfg):
    x, y = toy_batch
    return fd_gradient(toy_model, x, y, ocfg)


def meanfield_estimate(model, x, y, make_cfg, beta):
    cfg = make_cfg(dynamics='meanfield', t_free=500, t_nudge=500, beta=beta)
    return ep_gradient_three_phase(model, x, y, cfg, SpikeSampler(RngStream(0), np.arange(x.shape[0])))


class TestLoss:
    def test_zero_when_output_matches(self, toy_model, toy_batch, ocfg):
        x, _ = toy_batch
        y = free_fixed_point(toy_model, x, ocfg).state.output
        assert loss_at_fixed_point(toy_model, x, y, ocfg) == pytest.approx(0.0, abs=1e-20)

    def test_silent_network(self, toy_model, toy_batch, ocfg):
        x, y = toy_batch
        model = toy_model.with_params([np.zeros_like(w) for w in toy_model.params])
        assert loss_at_fixed_point(model, x, y, ocfg) == pytest.approx(0.5)

    def test_unconverged_relaxation_is_reported(self, toy_model, toy_batch):
        x, y = toy_batch
        with pytest.raises(OracleUnavailableError):
            loss_at_fixed_point(toy_model, x, y, OracleConfig(relax_steps=1))


class TestFiniteDifferences:
    def test_step_size_consistency(self, toy_model, toy_batch):
        x, y = toy_batch
        coarse = fd_gradient(toy_model, x, y, OracleConfig(epsilon=1e-3))
        fine = fd_gradient(toy_model, x, y, OracleConfig(epsilon=5e-4))
        for a, b in zip(coarse, fine):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-5)

    def test_shapes_follow_params(self, toy_model, reference):
        assert [g.shape for g in reference] == [w.shape for w in toy_model.params]
        assert np.any(flat(reference))


class TestEPAgreement:
    def test_small_nudge_aligns_with_reference(self, toy_model, toy_batch, make_cfg, reference):
        x, y = toy_batch
        estimate = meanfield_estimate(toy_model, x, y, make_cfg, beta=0.01)
        assert min(per_connection_cosine(estimate, reference)) >= 0.95
        assert cosine_similarity(flat(estimate.grads), flat(reference)) >= 0.99

    def test_alignment_improves_as_nudge_shrinks(self, toy_model, toy_batch, make_cfg, reference):
        x, y = toy_batch
        cosines = [cosine_similarity(flat(meanfield_estimate(toy_model, x, y, make_cfg, beta).grads),
                                     flat(reference))
                   for beta in (0.5, 0.1, 0.01)]
        assert all(later >= earlier - 1e-9 for earlier, later in zip(cosines, cosines[1:]))

    def test_one_step_reduces_loss(self, toy_model, toy_batch, make_cfg, ocfg):
        x, y = toy_batch
        estimate = meanfield_estimate(toy_model, x, y, make_cfg, beta=0.01)
        cfg = make_cfg(learning_rate=0.1)
        params = apply_update(toy_model.params, estimate, init_optimizer_state(toy_model.params, 'sgd'), cfg)
        assert loss_at_fixed_point(toy_model.with_params(params), x, y, ocfg) < \
            loss_at_fixed_point(toy_model, x, y, ocfg)


class TestCosine:
    def test_parallel_and_opposite(self):
        assert cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
        assert cosine_similarity([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(-1.0)
        assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_zero_vectors(self):
        assert cosine_similarity(np.zeros(3), np.zeros(3)) == 1.0
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0

    def test_per_connection_accepts_lists(self):
        grads = [np.ones((2, 2)), np.array([1.0, -1.0])]
        assert per_connection_cosine(grads, [2 * g for g in grads]) == pytest.approx([1.0, 1.0])
