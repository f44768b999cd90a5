"""Adam with bias correction over named parameter collections."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, TensorError


class GradientError(TensorError):
    """Non-finite gradient encountered; names the offending parameter."""


class AdamState:
    """First/second moment buffers and the shared step counter.

    Defaults follow the usual Adam settings (beta1=0.9, beta2=0.999,
    eps=1e-8); lr defaults to 1e-4, the value used by every training run
    in this repo.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(state: AdamState) -> None:
    """One in-place update from the gradients currently held by the params.

    Parameters whose grad buffer is unset are treated as zero-gradient.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in state.params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
