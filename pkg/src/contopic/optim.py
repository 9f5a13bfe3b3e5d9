"""Adam with bias correction, operating in place on leaf tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeMismatchError, Tensor


class AdamState:
    """First/second moment accumulators and the shared step counter."""

    def __init__(self, params):
        self.params = list(params)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def state_dict(self) -> dict:
        return {"m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v], "t": self.t}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")
        self.m = [np.asarray(a).copy() for a in state["m"]]
        self.v = [np.asarray(a).copy() for a in state["v"]]
        self.t = int(state["t"])


def adam_step(
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update using each parameter's ``.grad``.

    Parameters with no accumulated gradient (or frozen ones whose grad was
    never populated) are left untouched.
    """
    state.t += 1
    t = state.t
    for i, p in enumerate(state.params):
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatchError(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * (g * g)
        m_hat = state.m[i] / (1 - beta1**t)
        v_hat = state.v[i] / (1 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
