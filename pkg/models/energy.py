"""Energy functions of the layered network and their derivatives.

All functions take an input batch `x` of shape (B, *input_shape) and a
NetworkState, and return per-sample values (shape (B,)) or batch-mean gradients.
The clamped input enters only through the first connection term; its activity
is x itself (mean field) or a Bernoulli sample of x (stochastic).
"""
import numpy as np


def _quadratic(state):
    return 0.5 * sum(np.sum((layer ** 2).reshape(layer.shape[0], -1), axis=1) for layer in state.layers)


def rates(model, state):
    act = model.activation
    return [act(layer) for layer in state.layers]


def energy_det(model, x, state):
    """Hopfield-style energy with rho = sigma."""
    x = np.asarray(x, dtype=np.float64)
    model.check_state(x, state)
    return _quadratic(state) - model.interaction([x] + rates(model, state))


def energy_expected(model, x, state):
    """Expected stochastic energy; identical to energy_det because rho = sigma."""
    return energy_det(model, x, state)


def energy_stoch(model, x, state, rng):
    """Energy with every activity replaced by a fresh Bernoulli sample.

    `rng` is a SpikeSampler over the batch; layer streams use time step 0.
    """
    x = np.asarray(x, dtype=np.float64)
    model.check_state(x, state)
    acts = [rng.sample(x, 0, 0)]
    acts += [rng.sample(p, j, 0) for j, p in enumerate(rates(model, state), start=1)]
    return _quadratic(state) - model.interaction(acts)


def weight_grad_sums(model, acts):
    """Batch sums of dE/dw_i for given activities (input activity first)."""
    return [-model.connection_grad_sum(i, acts[i], acts[i + 1]) for i in range(len(model.params))]


def denergy_dw(model, x, state):
    """Batch-mean gradient of energy_expected with respect to every weight tensor."""
    x = np.asarray(x, dtype=np.float64)
    model.check_state(x, state)
    batch = x.shape[0]
    return [g / batch for g in weight_grad_sums(model, [x] + rates(model, state))]


def energy_gradient_xi(model, x, state):
    """dE/dxi of the expected energy for every layer (per sample)."""
    x = np.asarray(x, dtype=np.float64)
    drives = model.drives([x] + rates(model, state))
    act = model.activation
    return [xi - act.derivative(xi) * d for xi, d in zip(state.layers, drives)]
