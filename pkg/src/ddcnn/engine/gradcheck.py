"""Central finite differences and a per-layer gradient-check suite."""

from __future__ import annotations

import numpy as np

from ..exceptions import ParameterError


def finite_difference_gradient(f, x, h=1e-6):
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every coordinate of ``x``."""
    if h <= 0:
        raise ParameterError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """Max-norm relative discrepancy ``max|a - n| / max(max|a|, max|n|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


# --- gradient-check suite -------------------------------------------------
# Each case builds a random problem, forms the scalar s = sum(out * R) and
# compares every analytic gradient against central differences of s.

def _away_from_zero(rng, shape, gap=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap, x) + np.sign(x) * gap


def _distinct(rng, shape):
    # values on a lattice of spacing 0.01 > 2h keep max-pooling away from ties
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.01 - n * 0.005).astype(np.float64)


def _check_case(forward, backward, inputs, rng, h):
    """``forward(*inputs) -> out``; ``backward(grad_out, *inputs) -> grads``."""
    out = forward(*inputs)
    R = rng.standard_normal(np.shape(out))
    grads = backward(R, *inputs)
    worst = 0.0
    for k, g in enumerate(grads):
        if g is None:
            continue

        def scalar(v, k=k):
            args = list(inputs)
            args[k] = v
            return float(np.sum(forward(*args) * R))

        worst = max(worst, relative_error(g, finite_difference_gradient(scalar, inputs[k], h)))
    return worst


def _conv_case(d):
    from .conv import conv_backward, conv_forward

    def case(rng, h):
        spatial = tuple(int(v) for v in rng.integers(3, 6, size=d))
        k = tuple(int(v) for v in rng.integers(1, 4, size=d))
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        stride = int(rng.integers(1, 3))
        padding = ("none", "same")[int(rng.integers(2))]
        x = rng.standard_normal((2, *spatial, cin))
        w = rng.standard_normal((*k, cin, cout))
        b = rng.standard_normal(cout)
        return _check_case(
            lambda x, w, b: conv_forward(x, w, b, stride, padding),
            lambda g, x, w, b: conv_backward(g, x, w, stride, padding),
            [x, w, b], rng, h)
    return case


def _maxpool_case(d):
    from .pooling import maxpool_backward, maxpool_forward

    def case(rng, h):
        window = int(rng.integers(1, 3)) + 1
        spatial = tuple(int(v) for v in rng.integers(window, 2 * window + 2, size=d))
        x = _distinct(rng, (2, *spatial, 2))
        return _check_case(
            lambda x: maxpool_forward(x, window)[0],
            lambda g, x: (maxpool_backward(g, maxpool_forward(x, window)[1], x.shape),),
            [x], rng, h)
    return case


def _gap_case(rng, h):
    from .pooling import global_avgpool, global_avgpool_backward
    x = rng.standard_normal((2, *rng.integers(1, 5, size=int(rng.integers(2, 4))), 3))
    return _check_case(global_avgpool, lambda g, x: (global_avgpool_backward(g, x.shape),), [x], rng, h)


def _dense_case(rng, h):
    from .layers import dense_backward, dense_forward
    n, m = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    x, w, b = rng.standard_normal((3, n)), rng.standard_normal((n, m)), rng.standard_normal(m)
    return _check_case(dense_forward, lambda g, x, w, b: dense_backward(g, x, w), [x, w, b], rng, h)


def _activation_case(kind):
    from .layers import activation, activation_backward

    def case(rng, h):
        shape = (3, int(rng.integers(2, 7)))
        x = _away_from_zero(rng, shape) if kind == "relu" else 3 * rng.standard_normal(shape)
        return _check_case(
            lambda x: activation(kind, x),
            lambda g, x: (activation_backward(kind, g, activation(kind, x)),),
            [x], rng, h)
    return case


def _dropout_case(rng, h):
    from .layers import dropout, dropout_backward
    x = rng.standard_normal((4, 5))
    seed = int(rng.integers(1 << 30))
    fwd = lambda x: dropout(x, 0.3, "train", np.random.default_rng(seed))[0]
    bwd = lambda g, x: (dropout_backward(g, dropout(x, 0.3, "train", np.random.default_rng(seed))[1]),)
    return _check_case(fwd, bwd, [x], rng, h)


def _batchnorm_case(mode):
    from .layers import batchnorm_backward, batchnorm_forward

    def case(rng, h):
        C = int(rng.integers(1, 4))
        # two elements per channel normalize to exactly +-1, a zero-gradient degenerate case
        shape = (int(rng.integers(3, 6)), *rng.integers(1, 4, size=int(rng.integers(0, 3))), C)
        x = rng.standard_normal(shape)
        gamma, beta = rng.standard_normal(C), rng.standard_normal(C)
        rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2.0, C)

        def fwd(x, gamma, beta):
            return batchnorm_forward(x, gamma, beta, rm, rv, mode)[0]

        def bwd(g, x, gamma, beta):
            return batchnorm_backward(g, batchnorm_forward(x, gamma, beta, rm, rv, mode)[1])
        return _check_case(fwd, bwd, [x, gamma, beta], rng, h)
    return case


def _crossentropy_case(kind):
    from .layers import activation
    from .losses import crossentropy

    def case(rng, h):
        B = int(rng.integers(1, 5))
        if kind == "categorical":
            K = int(rng.integers(2, 7))
            z = 2 * rng.standard_normal((B, K))
            y = rng.integers(0, K, size=B)
            act = "softmax"
        else:
            z = 2 * rng.standard_normal((B, 1))
            y = rng.integers(0, 2, size=B)
            act = "sigmoid"
        loss = lambda z: crossentropy(kind, activation(act, z), y)[0]
        analytic = crossentropy(kind, activation(act, z), y)[1]
        return relative_error(analytic, finite_difference_gradient(loss, z, h))
    return case


GRADCHECK_CASES = {
    "conv2d": _conv_case(2),
    "conv3d": _conv_case(3),
    "maxpool2d": _maxpool_case(2),
    "maxpool3d": _maxpool_case(3),
    "global_avgpool": _gap_case,
    "dense": _dense_case,
    "relu": _activation_case("relu"),
    "sigmoid": _activation_case("sigmoid"),
    "softmax": _activation_case("softmax"),
    "dropout": _dropout_case,
    "batchnorm_train": _batchnorm_case("train"),
    "batchnorm_infer": _batchnorm_case("infer"),
    "categorical_crossentropy": _crossentropy_case("categorical"),
    "binary_crossentropy": _crossentropy_case("binary"),
}


def run_suite(points=20, seed=0, h=1e-6, tol=1e-4, kinds=None):
    """Run every registered case at ``points`` seeded random points.

    Returns a list of ``(kind, worst_relative_error, passed)``.
    """
    results = []
    for i, (kind, case) in enumerate(GRADCHECK_CASES.items()):
        if kinds is not None and kind not in kinds:
            continue
        rng = np.random.default_rng([seed, i])
        worst = max(case(rng, h) for _ in range(points))
        results.append((kind, worst, worst < tol))
    return results
