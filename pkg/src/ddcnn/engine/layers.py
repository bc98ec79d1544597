"""Dense, activation, dropout and batch-normalization layers with adjoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ParameterError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "softmax")


def dense_forward(x, weights, bias):
    """``out[b, j] = sum_i x[b, i] * W[i, j] + bias[j]``."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def dense_backward(grad_out, x, weights):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"dense: upstream gradient {grad_out.shape} != {(x.shape[0], weights.shape[1])}")
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def activation(kind, x):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return _sigmoid(np.asarray(x))
    if kind == "softmax":
        return softmax(x)
    raise ParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind, grad_out, out):
    """Adjoint expressed through the forward *output* ``out``."""
    if grad_out.shape != out.shape:
        raise ShapeError(f"{kind}: gradient shape {grad_out.shape} != output shape {out.shape}")
    if kind == "relu":
        return grad_out * (out > 0)
    if kind == "sigmoid":
        return grad_out * out * (1 - out)
    if kind == "softmax":
        return out * (grad_out - (grad_out * out).sum(axis=-1, keepdims=True))
    raise ParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def dropout(x, rate, mode, rng=None):
    """Inverted dropout.

    Returns ``(out, mask)`` where ``mask`` already carries the ``1/(1-rate)``
    survivor scale, or is ``None`` when the layer acts as the identity.
    """
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0:
        return x, None
    if rng is None:
        raise ParameterError("train-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


@dataclass
class BatchNormCache:
    mode: str
    xhat: np.ndarray
    gamma: np.ndarray
    inv_std: np.ndarray


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      momentum=0.99, eps=1e-5):
    """Normalize per channel (last axis) over batch and spatial axes.

    Returns ``(out, cache, new_running_mean, new_running_var)``; the running
    statistics are only updated in train mode, as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    C = x.shape[-1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                      ("running_var", running_var)):
        if arr.shape != (C,):
            raise ShapeError(f"batchnorm {name} shape {arr.shape} != ({C},)")
    if mode == "train":
        if x.shape[0] < 2:
            raise ParameterError(f"train-mode batch normalization needs batch >= 2, got {x.shape[0]}")
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = momentum * running_mean + (1 - momentum) * mean
        new_var = momentum * running_var + (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, BatchNormCache(mode, xhat, gamma, inv_std), new_mean, new_var


def batchnorm_backward(grad_out, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    if grad_out.shape != cache.xhat.shape:
        raise ShapeError(f"batchnorm: gradient shape {grad_out.shape} != {cache.xhat.shape}")
    axes = tuple(range(grad_out.ndim - 1))
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * cache.xhat).sum(axis=axes)
    if cache.mode == "infer":
        return grad_out * cache.gamma * cache.inv_std, grad_gamma, grad_beta
    m = grad_out.size // grad_out.shape[-1]
    grad_input = (cache.gamma * cache.inv_std / m) * (
        m * grad_out - grad_beta - cache.xhat * grad_gamma
    )
    return grad_input, grad_gamma, grad_beta
