"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class AdamState:
    """First/second moment estimates plus step count for a parameter list."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads, state: AdamState) -> None:
    """One Adam update in place. `grads` aligns with `params`; a None entry
    (or all-zero gradient on a fresh state) leaves that parameter unchanged."""
    if len(grads) != len(params):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
