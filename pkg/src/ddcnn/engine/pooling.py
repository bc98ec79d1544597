"""Non-overlapping max pooling and global average pooling, channels-last."""

from __future__ import annotations

import numpy as np

from ..exceptions import ParameterError, ShapeError


def _as_window(window, d):
    if np.isscalar(window):
        window = (int(window),) * d
    window = tuple(int(w) for w in window)
    if len(window) != d:
        raise ShapeError(f"window rank {len(window)} != spatial rank {d}")
    if any(w < 1 for w in window):
        raise ParameterError(f"pooling window must be >= 1, got {window}")
    return window


def maxpool_forward(x, window):
    """Max over non-overlapping windows of ``x`` (``[B, *spatial, C]``).

    A trailing remainder that does not fill a whole window is dropped.
    Returns ``(out, argmax)``; ``argmax`` has the shape of ``out`` and holds,
    for every window, the row-major flat index (over the input's spatial
    extents) of the first maximal element.
    """
    d = x.ndim - 2
    if d < 1:
        raise ShapeError(f"maxpool input must be [B, *spatial, C], got {x.shape}")
    window = _as_window(window, d)
    spatial = x.shape[1:-1]
    out_ext = tuple(e // w for e, w in zip(spatial, window))
    if any(o == 0 for o in out_ext):
        raise ShapeError(f"window {window} does not fit spatial extents {spatial}")
    B, C = x.shape[0], x.shape[-1]
    xt = x[(slice(None), *(slice(0, o * w) for o, w in zip(out_ext, window)))]
    # [B, o1, w1, o2, w2, ..., C] -> [B, o1, o2, ..., C, w1, w2, ...]
    split = xt.reshape(B, *(v for pair in zip(out_ext, window) for v in pair), C)
    order = (0, *range(1, 2 * d, 2), 2 * d + 1, *range(2, 2 * d + 1, 2))
    blocks = split.transpose(order).reshape(B, *out_ext, C, -1)
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]

    # local window index -> flat spatial index in the input
    local_coords = np.unravel_index(local, window)
    grids = np.meshgrid(*(np.arange(o) for o in out_ext), indexing="ij")
    coords = []
    for axis in range(d):
        g = grids[axis].reshape((1, *out_ext, 1))
        coords.append(g * window[axis] + local_coords[axis])
    argmax = np.ravel_multi_index(tuple(coords), spatial)
    return out, argmax


def maxpool_backward(grad_out, argmax, input_shape):
    """Route each upstream value to the input position recorded in ``argmax``."""
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} != pooled shape {argmax.shape}")
    input_shape = tuple(input_shape)
    B, C = input_shape[0], input_shape[-1]
    if grad_out.shape[0] != B or grad_out.shape[-1] != C:
        raise ShapeError(f"pooled shape {grad_out.shape} incompatible with input shape {input_shape}")
    vol = int(np.prod(input_shape[1:-1]))
    gx = np.zeros((B, C, vol), dtype=grad_out.dtype)
    g = np.moveaxis(grad_out, -1, 1).reshape(B, C, -1)
    idx = np.moveaxis(argmax, -1, 1).reshape(B, C, -1)
    np.put_along_axis(gx, idx, g, axis=-1)
    return np.moveaxis(gx.reshape(B, C, *input_shape[1:-1]), 1, -1)


def global_avgpool(x):
    """Per-channel mean over all spatial positions: ``[B, *spatial, C] -> [B, C]``."""
    if x.ndim < 3:
        raise ShapeError(f"global average pooling needs [B, *spatial, C], got {x.shape}")
    return x.mean(axis=tuple(range(1, x.ndim - 1)))


def global_avgpool_backward(grad_out, input_shape):
    input_shape = tuple(input_shape)
    if grad_out.shape != (input_shape[0], input_shape[-1]):
        raise ShapeError(f"upstream gradient shape {grad_out.shape} inconsistent with {input_shape}")
    vol = int(np.prod(input_shape[1:-1]))
    d = len(input_shape) - 2
    g = (grad_out / vol).reshape(input_shape[0], *([1] * d), input_shape[-1])
    return np.broadcast_to(g, input_shape).copy()
