"""Dense tensor kernels used by the network dynamics.

Every kernel works on float64 numpy arrays in row-major layout. The spatial
kernels accept either a single map (C, H, W) or a batch (N, C, H, W) and return
the same rank they were given.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from exceptions import DimensionError, IndexCorruptionError


@dataclass(frozen=True)
class IndexMap:
    """Argmax positions recorded by `maxpool`.

    flat_index holds, for every pooled value, the row-major position of the
    selected element inside its (H, W) input plane.
    """
    flat_index: np.ndarray
    input_shape: tuple


def _as_tensor(values):
    return np.asarray(values, dtype=np.float64)


def _as_batch(values, name):
    tensor = _as_tensor(values)
    if tensor.ndim == 3:
        return tensor[None], True
    if tensor.ndim != 4:
        raise DimensionError(f"{name} must be (C, H, W) or (N, C, H, W), got shape {tensor.shape}")
    return tensor, False


def conv_output_size(size, kernel, stride, padding):
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError(
            f"convolution of size {size} with kernel {kernel}, stride {stride}, padding {padding} has no output"
        )
    return out


def pool_output_size(size, window, stride):
    if window > size:
        raise DimensionError(f"pooling window {window} is larger than input size {size}")
    return (size - window) // stride + 1


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _padded_windows(x, kernel_h, kernel_w, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kernel_h, kernel_w), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def conv2d(input, kernel, stride=1, padding=0):
    """Cross-correlate `input` with `kernel` (no kernel flip).

    Args:
        input: (C_in, H, W) or (N, C_in, H, W).
        kernel: (C_out, C_in, K_H, K_W).
        stride: step between windows.
        padding: zero padding added on every spatial border.

    Returns:
        (C_out, O_H, O_W) or (N, C_out, O_H, O_W).
    """
    x, single = _as_batch(input, 'conv2d input')
    k = _as_tensor(kernel)
    if k.ndim != 4 or k.shape[1] != x.shape[1]:
        raise DimensionError(f"kernel {k.shape} does not match input channels {x.shape[1]}")
    _, _, height, width = x.shape
    _, _, kernel_h, kernel_w = k.shape
    out_h = conv_output_size(height, kernel_h, stride, padding)
    out_w = conv_output_size(width, kernel_w, stride, padding)

    windows = _padded_windows(x, kernel_h, kernel_w, stride, padding)[:, :, :out_h, :out_w]
    out = np.tensordot(windows, k, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_adjoint(grad_like, kernel, stride, padding, input_hw):
    """Apply the transpose of `conv2d` as a linear map.

    `input_hw` is the spatial size of the forward input; it cannot be recovered
    from the output size alone when the stride truncates.
    """
    y, single = _as_batch(grad_like, 'conv2d_adjoint input')
    k = _as_tensor(kernel)
    if k.ndim != 4 or k.shape[0] != y.shape[1]:
        raise DimensionError(f"kernel {k.shape} does not match {y.shape[1]} output channels")
    height, width = input_hw
    c_out, c_in, kernel_h, kernel_w = k.shape
    out_h = conv_output_size(height, kernel_h, stride, padding)
    out_w = conv_output_size(width, kernel_w, stride, padding)
    if y.shape[2:] != (out_h, out_w):
        raise DimensionError(f"output map {y.shape[2:]} does not match forward size {(out_h, out_w)}")

    # (N, O_H, O_W, C_in, K_H, K_W)
    cols = np.tensordot(y, k, axes=([1], [0]))
    xp = np.zeros((y.shape[0], c_in, height + 2 * padding, width + 2 * padding))
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for a in range(kernel_h):
        for b in range(kernel_w):
            xp[:, :, a:a + h_span:stride, b:b + w_span:stride] += cols[..., a, b].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(xp[:, :, padding:padding + height, padding:padding + width])
    return out[0] if single else out


def conv2d_weight_grad(input, grad_out, kernel_shape, stride, padding):
    """Correlate an input map with an output-shaped map, summed over the batch.

    This is the derivative of <grad_out, conv2d(input, k)> with respect to k.
    """
    x, _ = _as_batch(input, 'conv2d_weight_grad input')
    y, _ = _as_batch(grad_out, 'conv2d_weight_grad output')
    c_out, c_in, kernel_h, kernel_w = kernel_shape
    if x.shape[0] != y.shape[0] or x.shape[1] != c_in or y.shape[1] != c_out:
        raise DimensionError(f"input {x.shape} and output {y.shape} do not fit kernel {tuple(kernel_shape)}")
    out_h, out_w = y.shape[2:]
    windows = _padded_windows(x, kernel_h, kernel_w, stride, padding)
    if windows.shape[2] < out_h or windows.shape[3] < out_w:
        raise DimensionError(f"output map {y.shape[2:]} is larger than the forward output")
    windows = windows[:, :, :out_h, :out_w]
    return np.tensordot(y, windows, axes=([0, 2, 3], [0, 2, 3]))


def maxpool(input, window, stride=None):
    """Max-pool the two trailing axes.

    Trailing partial windows are truncated; ties resolve to the lowest flat index.
    """
    stride = window if stride is None else stride
    x = _as_tensor(input)
    if x.ndim < 2:
        raise DimensionError(f"maxpool needs at least two axes, got shape {x.shape}")
    height, width = x.shape[-2:]
    out_h = pool_output_size(height, window, stride)
    out_w = pool_output_size(width, window, stride)

    windows = sliding_window_view(x, (window, window), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    windows = windows[..., :out_h, :out_w, :, :]
    flat = windows.reshape(windows.shape[:-2] + (window * window,))
    local = np.argmax(flat, axis=-1)
    pooled = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]

    rows = np.arange(out_h)[:, None] * stride + local // window
    cols = np.arange(out_w)[None, :] * stride + local % window
    return np.ascontiguousarray(pooled), IndexMap(rows * width + cols, x.shape)


def unpool(pooled, indices, target_shape):
    """Scatter pooled values back to their recorded argmax positions."""
    values = _as_tensor(pooled)
    target_shape = tuple(target_shape)
    flat_index = np.asarray(indices.flat_index)
    if flat_index.shape != values.shape:
        raise DimensionError(f"index map {flat_index.shape} does not match pooled tensor {values.shape}")
    if values.shape[:-2] != target_shape[:-2]:
        raise DimensionError(f"pooled tensor {values.shape} does not fit target {target_shape}")
    plane = target_shape[-2] * target_shape[-1]
    if flat_index.size and (flat_index.min() < 0 or flat_index.max() >= plane):
        raise IndexCorruptionError(f"pool index outside target plane of {plane} elements")

    rows = int(np.prod(target_shape[:-2], dtype=np.int64))
    out = np.zeros((rows, plane))
    src = values.reshape(rows, -1)
    idx = flat_index.reshape(rows, -1)
    np.add.at(out, (np.arange(rows)[:, None], idx), src)
    return out.reshape(target_shape)
