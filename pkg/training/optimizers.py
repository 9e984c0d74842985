"""Weight updates: plain SGD and the decoupled-weight-decay adaptive moment rule."""
import logging
from dataclasses import dataclass, field

import numpy as np

from config.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from exceptions import DimensionError, NonFiniteGradientError

logger = logging.getLogger(__name__)

OPTIMIZERS = ('sgd', 'adamw')


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_optimizer_state(params, kind):
    if kind not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer '{kind}'")
    if kind == 'sgd':
        return OptimizerState(kind=kind)
    return OptimizerState(kind=kind, m=[np.zeros_like(w) for w in params], v=[np.zeros_like(w) for w in params])


def apply_update(params, grad, optimizer_state, cfg):
    """Return updated weights; `optimizer_state` is advanced in place.

    Args:
        params: list of weight tensors.
        grad: GradEstimate (or a plain list of tensors) shaped like params.
        optimizer_state: OptimizerState from init_optimizer_state.
        cfg: TrainConfig supplying learning_rate and weight_decay.
    """
    grads = getattr(grad, 'grads', grad)
    if len(grads) != len(params) or any(g.shape != w.shape for g, w in zip(grads, params)):
        raise DimensionError('gradient does not match parameter shapes')
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            logger.error("rejected update: non-finite gradient for connection %d", i)
            raise NonFiniteGradientError(f"non-finite gradient for connection {i}")

    lr = cfg.learning_rate
    optimizer_state.step += 1
    if optimizer_state.kind == 'sgd':
        return [w - lr * g for w, g in zip(params, grads)]

    t = optimizer_state.step
    correction1 = 1.0 - ADAM_BETA1 ** t
    correction2 = 1.0 - ADAM_BETA2 ** t
    updated = []
    for i, (w, g) in enumerate(zip(params, grads)):
        optimizer_state.m[i] = ADAM_BETA1 * optimizer_state.m[i] + (1.0 - ADAM_BETA1) * g
        optimizer_state.v[i] = ADAM_BETA2 * optimizer_state.v[i] + (1.0 - ADAM_BETA2) * g * g
        m_hat = optimizer_state.m[i] / correction1
        v_hat = optimizer_state.v[i] / correction2
        updated.append(w - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPSILON) + cfg.weight_decay * w))
    return updated
