"""Cross-entropy losses fused with their final activation."""

from __future__ import annotations

import numpy as np

from ..exceptions import ParameterError, ShapeError

PROB_CLAMP = 1e-12


def crossentropy(kind, prediction, labels):
    """Mean cross-entropy over the batch and its gradient at the pre-activation.

    ``categorical``: ``prediction`` is a softmax output ``[B, K]``, ``labels``
    integer classes in ``[0, K)``; the gradient w.r.t. the logits is
    ``(p - onehot) / B``.

    ``binary``: ``prediction`` is a sigmoid output ``[B]`` or ``[B, 1]``,
    ``labels`` in ``{0, 1}``; the gradient w.r.t. the logit is ``(p - y) / B``.
    """
    labels = np.asarray(labels)
    if kind == "categorical":
        if prediction.ndim != 2 or labels.shape != (prediction.shape[0],):
            raise ShapeError(f"categorical: prediction {prediction.shape} vs labels {labels.shape}")
        K = prediction.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise ParameterError(f"class label out of range [0, {K})")
        B = prediction.shape[0]
        # 64-bit so the upper clamp 1 - 1e-12 is representable
        p_true = np.clip(prediction[np.arange(B), labels].astype(np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
        loss = float(-np.log(p_true).mean())
        grad = prediction.copy()
        grad[np.arange(B), labels] -= 1
        return loss, grad / B
    if kind == "binary":
        p = prediction.reshape(-1)
        if labels.shape != p.shape:
            raise ShapeError(f"binary: prediction {prediction.shape} vs labels {labels.shape}")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise ParameterError("binary labels must be 0 or 1")
        y = labels.astype(p.dtype)
        pc = np.clip(p.astype(np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
        loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
        grad = ((p - y) / p.shape[0]).reshape(prediction.shape)
        return loss, grad
    raise ParameterError(f"unknown loss kind {kind!r}; expected 'categorical' or 'binary'")
