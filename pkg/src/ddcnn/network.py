"""Sequential execution of a :class:`ModelSpec` on top of the tensor engine."""

from __future__ import annotations

import math

import numpy as np

from . import engine
from .architectures import ModelSpec
from .exceptions import ShapeError


def init_params(spec: ModelSpec, rng, dtype=np.float32):
    """Glorot-uniform weights, zero biases, unit BN scale.

    Returns ``(params, state)``; ``state`` holds batch-norm running statistics.
    """
    params, state = {}, {}
    for key, shape in spec.param_shapes().items():
        idx, name = key.split(".")
        if name in ("kernel", "weights"):
            receptive = math.prod(shape[:-2])
            fan_in, fan_out = receptive * shape[-2], receptive * shape[-1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[key] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif name == "gamma":
            params[key] = np.ones(shape, dtype=dtype)
            state[f"{idx}.running_mean"] = np.zeros(shape, dtype=dtype)
            state[f"{idx}.running_var"] = np.ones(shape, dtype=dtype)
        else:
            params[key] = np.zeros(shape, dtype=dtype)
    return params, state


def forward(spec: ModelSpec, params, state, x, training=False, rng=None):
    """Run ``x`` (``[B, *input_shape]``) through the network.

    Returns ``(out, caches, new_state)``. ``caches`` is the per-layer record
    consumed by :func:`backward`; dropout draws from ``rng`` in training mode.
    """
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"{spec.name}: input samples of shape {x.shape[1:]} != {spec.input_shape}")
    mode = "train" if training else "infer"
    new_state = dict(state)
    caches = []
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "conv":
            cache = x
            x = engine.conv_forward(x, params[f"{i}.kernel"], params[f"{i}.bias"], layer.stride, layer.padding)
        elif kind == "maxpool":
            shape = x.shape
            x, argmax = engine.maxpool_forward(x, layer.window)
            cache = (argmax, shape)
        elif kind == "global-avgpool":
            cache = x.shape
            x = engine.global_avgpool(x)
        elif kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif kind == "dense":
            cache = x
            x = engine.dense_forward(x, params[f"{i}.weights"], params[f"{i}.bias"])
        elif kind in engine.layers.ACTIVATIONS:
            x = engine.activation(kind, x)
            cache = x
        elif kind == "dropout":
            x, cache = engine.dropout(x, layer.rate, mode, rng)
        elif kind == "batchnorm":
            x, cache, rm, rv = engine.batchnorm_forward(
                x, params[f"{i}.gamma"], params[f"{i}.beta"],
                state[f"{i}.running_mean"], state[f"{i}.running_var"],
                mode, layer.momentum, layer.eps,
            )
            new_state[f"{i}.running_mean"] = rm.astype(x.dtype, copy=False)
            new_state[f"{i}.running_var"] = rv.astype(x.dtype, copy=False)
        else:  # pragma: no cover - LayerSpec validates kinds
            raise ValueError(kind)
        caches.append(cache)
    return x, caches, new_state


def backward(spec: ModelSpec, params, caches, grad, from_preactivation=True):
    """Back-propagate ``grad`` and return ``{param name: gradient}``.

    With ``from_preactivation`` the incoming gradient is taken w.r.t. the
    input of the final activation (the fused loss gradient), so that layer is
    skipped.
    """
    grads = {}
    n = len(spec.layers)
    start = n - 2 if from_preactivation else n - 1
    for i in range(start, -1, -1):
        layer, cache = spec.layers[i], caches[i]
        kind = layer.kind
        if kind == "conv":
            grad, gk, gb = engine.conv_backward(grad, cache, params[f"{i}.kernel"], layer.stride, layer.padding)
            grads[f"{i}.kernel"], grads[f"{i}.bias"] = gk, gb
        elif kind == "maxpool":
            grad = engine.maxpool_backward(grad, *cache)
        elif kind == "global-avgpool":
            grad = engine.global_avgpool_backward(grad, cache)
        elif kind == "flatten":
            grad = grad.reshape(cache)
        elif kind == "dense":
            grad, gw, gb = engine.dense_backward(grad, cache, params[f"{i}.weights"])
            grads[f"{i}.weights"], grads[f"{i}.bias"] = gw, gb
        elif kind in engine.layers.ACTIVATIONS:
            grad = engine.activation_backward(kind, grad, cache)
        elif kind == "dropout":
            grad = engine.dropout_backward(grad, cache)
        elif kind == "batchnorm":
            grad, gg, gb = engine.batchnorm_backward(grad, cache)
            grads[f"{i}.gamma"], grads[f"{i}.beta"] = gg, gb
    return grads


def predict(spec: ModelSpec, params, state, X, batch_size=256):
    """Inference-mode outputs for ``X``, evaluated in chunks."""
    outs = []
    for start in range(0, len(X), batch_size):
        out, _, _ = forward(spec, params, state, X[start:start + batch_size], training=False)
        outs.append(out)
    if not outs:
        return np.zeros((0, spec.output_width))
    return np.concatenate(outs, axis=0)
