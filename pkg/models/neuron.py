"""Activation functions and spike generators.

The stochastic neuron fires a Bernoulli spike with probability given by a
hard sigmoid of its membrane potential. The deterministic LIF variants below it
exist only as baselines for the membrane-stability comparison.
"""
from dataclasses import dataclass, replace

import numpy as np

from config.constants import (
    LOWPASS_DECAY,
    LOWPASS_THRESHOLD,
    SCHEDULE_DECAY,
    SCHEDULE_MIN_STEP,
)
from exceptions import ContractViolation


def _check_kappa(kappa):
    if not kappa > 0:
        raise ContractViolation(f"kappa must be positive, got {kappa}")


def sigma(xi, kappa):
    """Firing probability clamp(kappa * xi, 0, 1)."""
    _check_kappa(kappa)
    return np.clip(kappa * np.asarray(xi, dtype=np.float64), 0.0, 1.0)


def sigma_prime(xi, kappa):
    """Straight-through derivative: kappa on [0, 1/kappa), zero elsewhere."""
    _check_kappa(kappa)
    scaled = kappa * np.asarray(xi, dtype=np.float64)
    return np.where((scaled >= 0.0) & (scaled < 1.0), float(kappa), 0.0)


@dataclass(frozen=True)
class HardSigmoid:
    kappa: float

    def __post_init__(self):
        _check_kappa(self.kappa)

    def __call__(self, xi):
        return sigma(xi, self.kappa)

    def derivative(self, xi):
        return sigma_prime(xi, self.kappa)

    @property
    def active_band(self):
        return 0.0, 1.0 / self.kappa


def sample_spikes(prob, rng):
    """Draw independent Bernoulli spikes from the stream `rng`."""
    prob = np.asarray(prob, dtype=np.float64)
    if prob.size and (np.min(prob) < 0.0 or np.max(prob) > 1.0 or not np.all(np.isfinite(prob))):
        raise ContractViolation('spike probabilities must lie in [0, 1]')
    return (rng.uniform(prob.shape) < prob).astype(np.float64)


# Deterministic baselines

@dataclass(frozen=True)
class LowpassConfig:
    decay: float = LOWPASS_DECAY
    threshold: float = LOWPASS_THRESHOLD


@dataclass(frozen=True)
class LowpassState:
    v: np.ndarray


def lif_lowpass_step(state, input_current, config=LowpassConfig()):
    """Leaky integrate-and-fire with an exponential moving-average membrane and hard reset."""
    v = config.decay * state.v + (1.0 - config.decay) * np.asarray(input_current, dtype=np.float64)
    spikes = (v >= config.threshold).astype(np.float64)
    v = np.where(spikes > 0, 0.0, v)
    return LowpassState(v=v), spikes


@dataclass(frozen=True)
class LifBaselineState:
    """Predictive-coding LIF state: membrane V, decoder, encoder and the rate state xi."""
    xi: np.ndarray
    v: np.ndarray
    dec: np.ndarray
    enc: np.ndarray
    alpha: float
    v_th: float
    kappa: float = 1.0

    @classmethod
    def zeros(cls, shape, alpha, v_th, kappa=1.0):
        zero = np.zeros(shape)
        return cls(xi=zero, v=zero.copy(), dec=zero.copy(), enc=zero.copy(), alpha=alpha, v_th=v_th, kappa=kappa)


def lif_predcoding_step(state, weighted_input, lam, alpha=None):
    """One step of the predictive-coding LIF neuron.

    Decoder, rate state, encoder, spike and membrane are updated in that order;
    the spike test reads the membrane of the previous step.
    """
    alpha = state.alpha if alpha is None else alpha
    if not 0.0 < alpha <= 1.0:
        raise ContractViolation(f"predictive factor must lie in (0, 1], got {alpha}")
    weighted_input = np.asarray(weighted_input, dtype=np.float64)

    dec = (1.0 - alpha) * state.dec + alpha * weighted_input
    xi = (1.0 - lam) * state.xi + lam * sigma_prime(state.xi, state.kappa) * dec
    enc = (sigma(xi, state.kappa) - (1.0 - alpha) * sigma(state.xi, state.kappa)) / alpha
    spikes = (state.v + enc > state.v_th).astype(np.float64)
    v = state.v + enc - spikes
    return replace(state, xi=xi, v=v, dec=dec, enc=enc, alpha=alpha), spikes


@dataclass(frozen=True)
class ScheduleState:
    xi: np.ndarray
    v: np.ndarray
    step: int = 0


def scheduled_step_size(lam, step, decay=SCHEDULE_DECAY, min_step=SCHEDULE_MIN_STEP):
    return max(min_step, lam * decay ** step)


def lif_schedule_step(state, weighted_input, lam, kappa, v_th,
                      decay=SCHEDULE_DECAY, min_step=SCHEDULE_MIN_STEP):
    """Deterministic sigma-delta spiking with a geometrically shrinking step size."""
    step_size = scheduled_step_size(lam, state.step, decay, min_step)
    xi = (1.0 - step_size) * state.xi + step_size * sigma_prime(state.xi, kappa) * np.asarray(weighted_input)
    drive = state.v + sigma(xi, kappa)
    spikes = (drive > v_th).astype(np.float64)
    return ScheduleState(xi=xi, v=drive - spikes, step=state.step + 1), spikes
