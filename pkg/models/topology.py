"""Layer specifications of a bidirectionally connected layered network.

A Topology lists the clamped input shape followed by every non-input layer;
connection i joins layer i (0 is the input) to layer i+1. The last layer is the
dense output layer.
"""
import re
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from exceptions import ConfigError, DimensionError
from models.linalg import conv_output_size, pool_output_size


class DenseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['dense'] = 'dense'
    units: int = Field(gt=0)


class ConvSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['conv'] = 'conv'
    channels: int = Field(gt=0)
    kernel: int = Field(gt=0)
    stride: int = Field(default=1, gt=0)
    padding: int = Field(default=0, ge=0)
    pool_window: Optional[int] = Field(default=None, gt=0)
    pool_stride: Optional[int] = Field(default=None, gt=0)

    @property
    def pooled(self):
        return self.pool_window is not None and self.pool_window > 1


LayerSpec = Annotated[Union[DenseSpec, ConvSpec], Field(discriminator='kind')]


class Topology(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    @field_validator('input_shape')
    @classmethod
    def _positive_dims(cls, value):
        if not value or any(d <= 0 for d in value):
            raise ValueError(f"input shape must have positive dimensions, got {value}")
        return value

    @property
    def n_connections(self):
        return len(self.layers)

    @property
    def n_outputs(self):
        return self.layers[-1].units if self.layers and isinstance(self.layers[-1], DenseSpec) else 0

    def layer_shapes(self):
        """Shapes of the input and of every layer state, input first."""
        shapes = [tuple(self.input_shape)]
        for spec in self.layers:
            shapes.append(_post_shape(shapes[-1], spec)[1])
        return shapes

    def conv_output_shapes(self):
        """Pre-pooling output shape of every connection (dense: the layer shape)."""
        shapes = self.layer_shapes()
        return [_post_shape(shapes[i], spec)[0] for i, spec in enumerate(self.layers)]

    def weight_shapes(self):
        shapes = self.layer_shapes()
        out = []
        for i, spec in enumerate(self.layers):
            if isinstance(spec, DenseSpec):
                out.append((int(np.prod(shapes[i])), spec.units))
            else:
                out.append((spec.channels, shapes[i][0], spec.kernel, spec.kernel))
        return out

    def neuron_counts(self):
        return [int(np.prod(shape)) for shape in self.layer_shapes()[1:]]

    def to_json(self):
        return self.model_dump_json()

    @classmethod
    def from_json(cls, text):
        return cls.model_validate_json(text)


def _post_shape(pre_shape, spec):
    if isinstance(spec, DenseSpec):
        return (spec.units,), (spec.units,)
    if len(pre_shape) != 3:
        raise DimensionError(f"convolution needs a (C, H, W) input, got {pre_shape}")
    _, height, width = pre_shape
    out_h = conv_output_size(height, spec.kernel, spec.stride, spec.padding)
    out_w = conv_output_size(width, spec.kernel, spec.stride, spec.padding)
    conv_shape = (spec.channels, out_h, out_w)
    if not spec.pooled:
        return conv_shape, conv_shape
    pool_stride = spec.pool_stride or spec.pool_window
    pooled = (spec.channels,
              pool_output_size(out_h, spec.pool_window, pool_stride),
              pool_output_size(out_w, spec.pool_window, pool_stride))
    return conv_shape, pooled


_LAYER_ADAPTER = TypeAdapter(LayerSpec)
_FC_TOKEN = re.compile(r'^fc(\d+)$')
_CONV_TOKEN = re.compile(r'^conv(\d+)((?::\d+)+)$')


def parse_layer_token(token):
    """Parse `fc512` or `conv64:5:1:1[:3:3]` (channels:kernel:stride:padding[:pool:pool_stride])."""
    token = token.strip().lower()
    match = _FC_TOKEN.match(token)
    if match:
        return DenseSpec(units=int(match.group(1)))
    match = _CONV_TOKEN.match(token)
    if match:
        fields = [int(v) for v in match.group(2).strip(':').split(':')]
        if len(fields) not in (3, 5):
            raise ConfigError(f"conv layer '{token}' needs kernel:stride:padding[:pool:pool_stride]", key='hidden')
        spec = {'channels': int(match.group(1)), 'kernel': fields[0], 'stride': fields[1], 'padding': fields[2]}
        if len(fields) == 5:
            spec.update(pool_window=fields[3], pool_stride=fields[4])
        return _LAYER_ADAPTER.validate_python({'kind': 'conv', **spec})
    raise ConfigError(f"cannot parse layer '{token}'", key='hidden')


def build_topology(input_shape, hidden, n_classes, n_perclass=1):
    """Topology with the given hidden layers and an inflated dense output layer."""
    layers = [parse_layer_token(t) if isinstance(t, str) else t for t in hidden]
    base = Topology(input_shape=tuple(input_shape), layers=tuple(layers) + (DenseSpec(units=n_classes),))
    topology = augment_outputs(base, n_classes, n_perclass)
    topology.layer_shapes()
    return topology


def augment_outputs(topology, n_classes, n_perclass):
    """Replace each output neuron by `n_perclass` neurons of the same class."""
    if n_perclass < 1:
        raise ValueError(f"n_perclass must be at least 1, got {n_perclass}")
    output = DenseSpec(units=n_classes * n_perclass)
    return topology.model_copy(update={'layers': topology.layers[:-1] + (output,)})


def init_params(topology, seed, gain=1.0, nonnegative=False):
    """Uniform Glorot initialisation in +/- gain * sqrt(6 / (fan_in + fan_out)).

    With `nonnegative` the magnitudes are kept and the signs dropped.
    """
    rng = np.random.default_rng(seed)
    params = []
    for shape in topology.weight_shapes():
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:
            receptive = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=shape)
        params.append(np.abs(w) if nonnegative else w)
    return params
