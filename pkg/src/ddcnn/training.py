"""Mini-batch Adam training of a single :class:`ModelSpec`."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .architectures import ModelSpec
from .engine import AdamState, adam_step, crossentropy
from .exceptions import NumericError, ParameterError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None
    shuffle_seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch size must be >= 1, got {self.batch_size}")
        if self.patience is not None and self.patience < 1:
            raise ParameterError(f"early-stopping patience must be >= 1, got {self.patience}")


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict
    state: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    seed: int = 0
    train_seconds: float = 0.0
    best_epoch: int | None = None

    def predict_proba(self, X, batch_size=256):
        X = np.asarray(X, dtype=next(iter(self.params.values())).dtype)
        return network.predict(self.spec, self.params, self.state, X, batch_size)

    def predict(self, X, batch_size=256):
        return labels_from_output(self.predict_proba(X, batch_size), self.spec.binary)


def labels_from_output(out, binary):
    """Argmax for a softmax output, 0.5 threshold for a single sigmoid column."""
    if binary:
        return (np.asarray(out).reshape(len(out), -1)[:, 0] >= 0.5).astype(np.int64)
    return np.asarray(out).argmax(axis=1)


def _batches(n, batch_size, order, merge_singleton):
    starts = list(range(0, n, batch_size))
    bounds = [(s, min(s + batch_size, n)) for s in starts]
    # train-mode batch norm cannot normalize a single sample
    if merge_singleton and len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2] = (bounds[-2][0], n)
        bounds.pop()
    return [order[a:b] for a, b in bounds]


def _metrics(spec, params, state, X, y):
    out = network.predict(spec, params, state, X)
    loss, _ = crossentropy(spec.loss, out, y)
    acc = float(np.mean(labels_from_output(out, spec.binary) == y))
    return loss, acc


def train_model(spec: ModelSpec, train, val=None, config: TrainingConfig | None = None, seed=0):
    """Train ``spec`` on ``train = (X, y)``; ``val`` drives early stopping.

    Deterministic given ``(seed, config, data order)``: ``seed`` fixes the
    weight initialization and dropout masks, ``config.shuffle_seed`` the
    mini-batch order. With early stopping the parameters of the epoch with the
    best validation accuracy are restored.
    """
    config = config or TrainingConfig()
    dtype = np.dtype(config.dtype)
    X, y = np.asarray(train[0], dtype=dtype), np.asarray(train[1]).astype(np.int64)
    if tuple(X.shape[1:]) != spec.input_shape:
        raise ShapeError(f"{spec.name}: training samples {X.shape[1:]} != input {spec.input_shape}")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} samples but {len(y)} labels")
    if val is not None:
        Xv, yv = np.asarray(val[0], dtype=dtype), np.asarray(val[1]).astype(np.int64)
        if tuple(Xv.shape[1:]) != spec.input_shape:
            raise ShapeError(f"{spec.name}: validation samples {Xv.shape[1:]} != input {spec.input_shape}")
    if config.patience is not None and val is None:
        raise ParameterError("early stopping monitors validation accuracy; no validation set given")

    init_ss, dropout_ss = np.random.SeedSequence(seed).spawn(2)
    params, state = network.init_params(spec, np.random.default_rng(init_ss), dtype)
    drop_rng = np.random.default_rng(dropout_ss)
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    opt = {
        k: AdamState.zeros_like(v, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        for k, v in params.items()
    }
    history = {"loss": [], "accuracy": [], "val_loss": [], "val_accuracy": []}
    has_bn = "batchnorm" in spec.kinds()
    best = (-np.inf, None, None, None)  # (val acc, epoch, params, state)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(X))
        loss_sum, correct = 0.0, 0
        for b, idx in enumerate(_batches(len(X), config.batch_size, order, has_bn)):
            xb, yb = X[idx], y[idx]
            out, caches, state = network.forward(spec, params, state, xb, training=True, rng=drop_rng)
            loss, grad = crossentropy(spec.loss, out, yb)
            if not np.isfinite(loss):
                raise NumericError(f"{spec.name}: non-finite loss at epoch {epoch}, batch {b}")
            grads = network.backward(spec, params, caches, grad.astype(dtype, copy=False))
            try:
                for k in params:
                    params[k], opt[k] = adam_step(params[k], grads[k], opt[k])
            except NumericError as exc:
                raise NumericError(f"{spec.name}: {exc} at epoch {epoch}, batch {b}") from exc
            loss_sum += loss * len(idx)
            correct += int(np.sum(labels_from_output(out, spec.binary) == yb))
        history["loss"].append(loss_sum / len(X))
        history["accuracy"].append(correct / len(X))
        if val is not None:
            vl, va = _metrics(spec, params, state, Xv, yv)
            history["val_loss"].append(vl)
            history["val_accuracy"].append(va)
            log.debug("%s epoch %d loss %.4f acc %.4f val_acc %.4f", spec.name, epoch,
                      history["loss"][-1], history["accuracy"][-1], va)
            if config.patience is not None:
                if va > best[0]:
                    best = (va, epoch, {k: v.copy() for k, v in params.items()}, dict(state))
                elif epoch - best[1] >= config.patience:
                    break
    elapsed = time.perf_counter() - t0
    best_epoch = None
    if config.patience is not None and best[2] is not None:
        _, best_epoch, params, state = best
    return TrainedModel(spec, params, state, history, seed, elapsed, best_epoch)


def evaluate(model, X, y):
    """Fraction of samples whose predicted label equals ``y``."""
    if len(X) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    return float(np.mean(np.asarray(model.predict(X)) == np.asarray(y)))
