"""Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..exceptions import NumericError, ShapeError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param, grad, state):
    """One bias-corrected Adam update. Returns ``(new_param, new_state)``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(f"adam: param {param.shape}, grad {grad.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient entries in Adam update")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param.astype(param.dtype, copy=False), replace(state, m=m.astype(param.dtype, copy=False),
                                                              v=v.astype(param.dtype, copy=False), t=t)
