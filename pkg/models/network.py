"""The layered energy model: topology, symmetric weights and activation gain.

Every connection is used in both directions. The feedback path of a dense
connection is the transpose of its weight; the feedback path of a conv
connection is the adjoint convolution applied after scattering through the
pooling indices recorded on the forward path.
"""
from dataclasses import dataclass, field

import numpy as np

from exceptions import DimensionError
from models.linalg import conv2d, conv2d_adjoint, conv2d_weight_grad, maxpool, unpool
from models.neuron import HardSigmoid
from models.topology import DenseSpec, init_params


@dataclass
class NetworkState:
    """Membrane potentials of every non-input layer, batch axis first."""
    layers: list

    @classmethod
    def zeros(cls, topology, batch_size):
        return cls([np.zeros((batch_size,) + shape) for shape in topology.layer_shapes()[1:]])

    @property
    def batch_size(self):
        return self.layers[0].shape[0]

    @property
    def output(self):
        return self.layers[-1]

    def copy(self):
        return NetworkState([layer.copy() for layer in self.layers])

    def take(self, positions):
        return NetworkState([layer[positions] for layer in self.layers])

    @classmethod
    def concat(cls, states):
        return cls([np.concatenate(parts) for parts in zip(*(s.layers for s in states))])


@dataclass
class LayeredEnergyModel:
    topology: object
    params: list
    kappa: float
    _shapes: list = field(init=False, repr=False)
    _conv_shapes: list = field(init=False, repr=False)

    def __post_init__(self):
        self._shapes = self.topology.layer_shapes()
        self._conv_shapes = self.topology.conv_output_shapes()
        expected = self.topology.weight_shapes()
        if len(self.params) != len(expected):
            raise DimensionError(f"expected {len(expected)} weight tensors, got {len(self.params)}")
        for i, (w, shape) in enumerate(zip(self.params, expected)):
            if tuple(w.shape) != tuple(shape):
                raise DimensionError(f"weight {i} has shape {w.shape}, topology needs {shape}")

    @classmethod
    def initialise(cls, topology, kappa, seed, gain=1.0, nonnegative=False):
        return cls(topology, init_params(topology, seed, gain, nonnegative), kappa)

    @property
    def layer_shapes(self):
        return self._shapes

    @property
    def activation(self):
        return HardSigmoid(self.kappa)

    def with_params(self, params):
        return LayeredEnergyModel(self.topology, params, self.kappa)

    def with_kappa(self, kappa):
        return LayeredEnergyModel(self.topology, self.params, kappa)

    def check_state(self, x, state):
        batch = x.shape[0]
        if tuple(x.shape[1:]) != self._shapes[0]:
            raise DimensionError(f"input batch has sample shape {x.shape[1:]}, topology needs {self._shapes[0]}")
        if len(state.layers) != len(self._shapes) - 1:
            raise DimensionError(f"state has {len(state.layers)} layers, topology has {len(self._shapes) - 1}")
        for i, layer in enumerate(state.layers, start=1):
            if layer.shape != (batch,) + self._shapes[i]:
                raise DimensionError(f"layer {i} state has shape {layer.shape}, expected {(batch,) + self._shapes[i]}")

    def forward(self, i, pre):
        """Drive from activity of layer i into layer i+1, and the pooling indices used."""
        spec = self.topology.layers[i]
        w = self.params[i]
        if isinstance(spec, DenseSpec):
            return pre.reshape(pre.shape[0], -1) @ w, None
        out = conv2d(pre, w, spec.stride, spec.padding)
        if not spec.pooled:
            return out, None
        return maxpool(out, spec.pool_window, spec.pool_stride or spec.pool_window)

    def backward(self, i, post, indices=None):
        """Feedback drive from activity of layer i+1 into layer i."""
        spec = self.topology.layers[i]
        w = self.params[i]
        batch = post.shape[0]
        if isinstance(spec, DenseSpec):
            return (post @ w.T).reshape((batch,) + self._shapes[i])
        if spec.pooled:
            post = unpool(post, indices, (batch,) + self._conv_shapes[i])
        return conv2d_adjoint(post, w, spec.stride, spec.padding, self._shapes[i][1:])

    def drives(self, acts):
        """Total synaptic drive of every non-input layer.

        acts[0] is the input activity, acts[j] the activity of layer j.
        """
        forward = [self.forward(i, acts[i]) for i in range(len(self.params))]
        drives = []
        for j in range(1, len(acts)):
            total = forward[j - 1][0].copy()
            if j < len(self.params):
                total += self.backward(j, acts[j + 1], forward[j][1])
            drives.append(total)
        return drives

    def interaction(self, acts):
        """Per-sample sum over connections of act_{i+1} . W_i(act_i)."""
        total = np.zeros(acts[0].shape[0])
        for i in range(len(self.params)):
            drive, _ = self.forward(i, acts[i])
            total += np.sum((acts[i + 1] * drive).reshape(drive.shape[0], -1), axis=1)
        return total

    def connection_grad_sum(self, i, pre, post):
        """Batch sum of the interaction derivative w.r.t. weight i (without the energy's minus sign)."""
        spec = self.topology.layers[i]
        if isinstance(spec, DenseSpec):
            return pre.reshape(pre.shape[0], -1).T @ post
        indices = None
        if spec.pooled:
            _, indices = self.forward(i, pre)
            post = unpool(post, indices, (post.shape[0],) + self._conv_shapes[i])
        return conv2d_weight_grad(pre, post, self.params[i].shape, spec.stride, spec.padding)
