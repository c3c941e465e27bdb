"""Adam optimizer over lists of parameter tensors."""
from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor


class Adam:
    """Adam with bias correction; update is lr * m_hat / (sqrt(v_hat) + eps).

    Moments start at zero and the step counter at 0, so a step with zero
    gradients everywhere leaves both parameters and moments untouched.
    Parameters with ``grad is None`` are treated as zero-gradient.
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = 0.0
            elif g.shape != p.data.shape:
                raise ShapeError(
                    f"adam: grad shape {g.shape} does not match param {p.data.shape}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
