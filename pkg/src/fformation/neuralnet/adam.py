"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper) -> AdamState:
        arrays = getattr(params, "arrays", params)
        state = cls(**hyper)
        state.m = {k: np.zeros_like(a) for k, a in arrays.items()}
        state.v = {k: np.zeros_like(a) for k, a in arrays.items()}
        return state

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "epsilon": self.epsilon}

    def copy(self) -> AdamState:
        return AdamState(self.lr, self.beta1, self.beta2, self.epsilon, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params, grads, state: AdamState):
    """Update ``params`` in place; returns ``(params, state)``."""
    arrays = getattr(params, "arrays", params)
    if not state.m:
        state.m = {k: np.zeros_like(a) for k, a in arrays.items()}
        state.v = {k: np.zeros_like(a) for k, a in arrays.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for k, p in arrays.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
    return params, state
