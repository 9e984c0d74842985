"""Finite-difference reference gradient of the mean-field loss.

The loss is L = 1/2 ||xi*_out - y||^2 at the free fixed point of the rate
dynamics, averaged over the batch. Every weight is perturbed by +/- epsilon and
the network re-relaxed from the unperturbed fixed point.
"""
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.constants import ORACLE_EPSILON, ORACLE_RELAX_STEPS, ORACLE_RESIDUAL_TOL
from exceptions import OracleUnavailableError
from models.dynamics import PhaseConfig, relax_meanfield
from models.network import NetworkState

logger = logging.getLogger(__name__)


class OracleConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    epsilon: float = Field(default=ORACLE_EPSILON, gt=0)
    relax_steps: int = Field(default=ORACLE_RELAX_STEPS, ge=1)
    residual_tol: float = Field(default=ORACLE_RESIDUAL_TOL, gt=0)
    lam: float = Field(default=0.5, gt=0, le=1)


def free_fixed_point(model, x, ocfg, init_state=None):
    """Mean-field free fixed point; raises OracleUnavailableError if it is not reached."""
    x = np.asarray(x, dtype=np.float64)
    if init_state is None:
        init_state = NetworkState.zeros(model.topology, x.shape[0])
    phase = PhaseConfig(ocfg.lam, ocfg.relax_steps)
    fixed_point = relax_meanfield(model, x, init_state, phase, tol=ocfg.residual_tol)
    if fixed_point.residual > ocfg.residual_tol:
        raise OracleUnavailableError(
            f"mean-field relaxation stopped at residual {fixed_point.residual:.3g} "
            f"after {fixed_point.steps_run} steps (tolerance {ocfg.residual_tol:.3g})"
        )
    return fixed_point


def loss_at_fixed_point(model, x, y, ocfg, init_state=None):
    """Batch-mean loss 1/2 ||xi*_out - y||^2 at the mean-field free fixed point."""
    fixed_point = free_fixed_point(model, x, ocfg, init_state)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(0.5 * np.sum((fixed_point.state.output - y) ** 2, axis=1)))


def fd_gradient(model, x, y, ocfg):
    """Central differences (L(w + eps) - L(w - eps)) / (2 eps), weight by weight."""
    base = free_fixed_point(model, x, ocfg)
    eps = ocfg.epsilon
    grads = []
    for i, w in enumerate(model.params):
        grad = np.zeros_like(w)
        for index in np.ndindex(w.shape):
            losses = []
            for delta in (eps, -eps):
                perturbed = [p.copy() for p in model.params]
                perturbed[i][index] += delta
                losses.append(loss_at_fixed_point(model.with_params(perturbed), x, y, ocfg, base.state))
            grad[index] = (losses[0] - losses[1]) / (2.0 * eps)
        grads.append(grad)
        logger.debug("finite differences done for connection %d (%d weights)", i, w.size)
    return grads


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 1.0 if not np.any(a) and not np.any(b) else 0.0
    return float(a @ b / norm)


def per_connection_cosine(estimate, reference):
    grads = getattr(estimate, 'grads', estimate)
    return [cosine_similarity(g, r) for g, r in zip(grads, reference)]
