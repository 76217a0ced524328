"""Adam with bias correction, one state object per parameter tensor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        shape = np.shape(param.data if hasattr(param, "data") else param)
        return cls(np.zeros(shape), np.zeros(shape), **hyper)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(param, grad, state: AdamState):
    """Update ``param.data`` in place and advance ``state`` by one step."""
    if grad.shape != param.data.shape or state.m.shape != param.data.shape:
        raise ShapeError(
            f"adam_step: param {param.data.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state
