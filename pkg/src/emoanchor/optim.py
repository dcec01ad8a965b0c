"""Adam with decoupled weight decay, operating on the flat parameter dict."""

from __future__ import annotations

import numpy as np

from .errors import TrainingError
from .tensor import Tensor


class AdamW:
    """Decay is applied directly to the weights before the Adam delta:
    w <- w - lr*wd*w, then the bias-corrected moment update."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-4,
        weight_decay: float = 0.7,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for key, p in self.params.items():
            if p.grad is None:
                raise TrainingError(f"parameter {key!r} has no gradient; was it left out of the graph?")
            g = p.grad.astype(np.float32, copy=False)
            if self.weight_decay:
                p.data *= np.float32(1.0 - self.lr * self.weight_decay)
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
