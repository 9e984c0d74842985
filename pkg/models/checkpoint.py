"""Versioned `.npz` checkpoints.

Layout: `version`, `topology` (JSON string), `kappa`, `seed`, `epoch`,
`optimizer` (kind), `opt_step`, and per connection `w_<i>` plus, for the
adaptive optimizer, `m_<i>` / `v_<i>`. Arrays are little-endian float64.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from config.constants import CHECKPOINT_VERSION
from exceptions import CheckpointError, CheckpointVersionError
from models.network import LayeredEnergyModel
from models.topology import Topology
from training.optimizers import OptimizerState

logger = logging.getLogger(__name__)

_LE_FLOAT = np.dtype('<f8')


@dataclass
class Checkpoint:
    model: LayeredEnergyModel
    optimizer_state: OptimizerState
    seed: int
    epoch: int


def save_checkpoint(path, model, optimizer_state, seed, epoch):
    arrays = {
        'version': np.array(CHECKPOINT_VERSION),
        'topology': np.array(model.topology.to_json()),
        'kappa': np.array(model.kappa, dtype=_LE_FLOAT),
        'seed': np.array(seed, dtype=np.int64),
        'epoch': np.array(epoch, dtype=np.int64),
        'optimizer': np.array(optimizer_state.kind),
        'opt_step': np.array(optimizer_state.step, dtype=np.int64),
    }
    for i, w in enumerate(model.params):
        arrays[f"w_{i}"] = np.asarray(w, dtype=_LE_FLOAT)
    for i, (m, v) in enumerate(zip(optimizer_state.m, optimizer_state.v)):
        arrays[f"m_{i}"] = np.asarray(m, dtype=_LE_FLOAT)
        arrays[f"v_{i}"] = np.asarray(v, dtype=_LE_FLOAT)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as stream:
        np.savez(stream, **arrays)
    logger.info("saved checkpoint (epoch %d) to %s", epoch, path)


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            contents = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err

    version = int(contents.get('version', -1))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path} has format version {version}, expected {CHECKPOINT_VERSION}")

    topology = Topology.from_json(str(contents['topology']))
    n = topology.n_connections
    params = [contents[f"w_{i}"].astype(np.float64) for i in range(n)]
    kind = str(contents['optimizer'])
    state = OptimizerState(kind=kind, step=int(contents['opt_step']))
    if "m_0" in contents:
        state.m = [contents[f"m_{i}"].astype(np.float64) for i in range(n)]
        state.v = [contents[f"v_{i}"].astype(np.float64) for i in range(n)]
    model = LayeredEnergyModel(topology, params, float(contents['kappa']))
    return Checkpoint(model, state, int(contents['seed']), int(contents['epoch']))
