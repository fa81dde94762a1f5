"""Adam with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if p.adam_m is None:
                p.adam_m = np.zeros_like(p.data)
                p.adam_v = np.zeros_like(p.data)
            p.step_count += 1
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * g
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * (g * g)
            m_hat = p.adam_m / (1.0 - self.beta1 ** p.step_count)
            v_hat = p.adam_v / (1.0 - self.beta2 ** p.step_count)
            np.sqrt(v_hat, out=v_hat)
            v_hat += self.eps
            m_hat /= v_hat
            m_hat *= self.lr
            p.data = p.data - m_hat

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
