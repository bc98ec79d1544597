"""N-d convolution (2D and 3D) in channels-last layout with explicit adjoints.

Tensors carry a leading batch axis: ``x`` is ``[B, *spatial, C_in]`` and the
kernel is ``[*k, C_in, C_out]``. The forward pass is im2col followed by a
single matrix product; the backward pass scatters the column gradient back
onto the (padded) input.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ParameterError, ShapeError

PADDING_MODES = ("none", "same")


def _pad_amounts(extents, ksize, stride, padding):
    if padding not in PADDING_MODES:
        raise ParameterError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
    pads = []
    for e, k in zip(extents, ksize):
        if padding == "none":
            pads.append((0, 0))
        else:
            # TF convention: output extent ceil(E / stride), extra pixel at the end
            out = -(-e // stride)
            total = max((out - 1) * stride + k - e, 0)
            pads.append((total // 2, total - total // 2))
    return pads


def conv_output_shape(extents, ksize, stride=1, padding="none"):
    """Output spatial extents: ``floor((E + pad - k) / stride) + 1`` per dim."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    pads = _pad_amounts(extents, ksize, stride, padding)
    out = []
    for e, k, (lo, hi) in zip(extents, ksize, pads):
        if k > e + lo + hi:
            raise ShapeError(f"kernel extent {k} exceeds padded input extent {e + lo + hi}")
        out.append((e + lo + hi - k) // stride + 1)
    return tuple(out)


def _check(x, kernel, bias=None):
    d = kernel.ndim - 2
    if d not in (2, 3):
        raise ShapeError(f"kernel must be [*k, C_in, C_out] with 2 or 3 spatial dims, got {kernel.shape}")
    if x.ndim != d + 2:
        raise ShapeError(f"input must be [B, *spatial, C] with {d} spatial dims, got {x.shape}")
    if x.shape[-1] != kernel.shape[-2]:
        raise ShapeError(f"input channels {x.shape[-1]} != kernel in-channels {kernel.shape[-2]}")
    if bias is not None and bias.shape != (kernel.shape[-1],):
        raise ShapeError(f"bias shape {bias.shape} != ({kernel.shape[-1]},)")
    return d


def _im2col(x, ksize, stride, padding):
    d = len(ksize)
    pads = _pad_amounts(x.shape[1:-1], ksize, stride, padding)
    out_ext = conv_output_shape(x.shape[1:-1], ksize, stride, padding)
    xp = np.pad(x, [(0, 0), *pads, (0, 0)]) if any(p != (0, 0) for p in pads) else x
    win = sliding_window_view(xp, ksize, axis=tuple(range(1, d + 1)))
    if stride > 1:
        win = win[(slice(None),) + (slice(None, None, stride),) * d]
    win = win[(slice(None),) + tuple(slice(0, o) for o in out_ext)]
    # [B, *out, C, *k] -> [B, *out, *k, C] so columns line up with kernel.reshape(-1, C_out)
    order = (0, *range(1, d + 1), *range(d + 2, 2 * d + 2), d + 1)
    cols = win.transpose(order).reshape(-1, int(np.prod(ksize)) * x.shape[-1])
    return cols, out_ext, pads, xp.shape


def conv_forward(x, kernel, bias, stride=1, padding="none"):
    """Cross-correlate ``x`` with ``kernel`` and add ``bias``.

    Returns ``[B, *out, C_out]`` where each output value is the weighted sum of
    the kernel over the underlying input patch plus the channel bias.
    """
    d = _check(x, kernel, bias)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    ksize = kernel.shape[:d]
    cols, out_ext, _, _ = _im2col(x, ksize, stride, padding)
    out = cols @ kernel.reshape(-1, kernel.shape[-1])
    out += bias
    return out.reshape(x.shape[0], *out_ext, kernel.shape[-1])


def conv_backward(grad_out, x, kernel, stride=1, padding="none"):
    """Adjoint of :func:`conv_forward`.

    Returns ``(grad_input, grad_kernel, grad_bias)`` shaped like
    ``(x, kernel, bias)``.
    """
    d = _check(x, kernel)
    ksize = kernel.shape[:d]
    cols, out_ext, pads, padded_shape = _im2col(x, ksize, stride, padding)
    expected = (x.shape[0], *out_ext, kernel.shape[-1])
    if grad_out.shape != expected:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} != forward output shape {expected}")
    c_out = kernel.shape[-1]
    g2 = grad_out.reshape(-1, c_out)
    grad_kernel = (cols.T @ g2).reshape(kernel.shape)
    grad_bias = g2.sum(axis=0)

    gcols = (g2 @ kernel.reshape(-1, c_out).T).reshape(x.shape[0], *out_ext, *ksize, x.shape[-1])
    gxp = np.zeros(padded_shape, dtype=np.result_type(grad_out, kernel))
    for offs in itertools.product(*(range(k) for k in ksize)):
        dst = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offs, out_ext))
        gxp[(slice(None), *dst)] += gcols[(slice(None),) + (slice(None),) * d + offs]
    crop = tuple(slice(lo, lo + e) for (lo, _), e in zip(pads, x.shape[1:-1]))
    grad_input = gxp[(slice(None), *crop)]
    return np.ascontiguousarray(grad_input), grad_kernel, grad_bias
