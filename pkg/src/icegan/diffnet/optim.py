"""Adam optimizer over explicit parameter lists.

Gradients come from :func:`icegan.diffnet.tensor.gradients`; the optimizer
only consumes (parameter, gradient) pairs, so one model can be updated by
several optimizers holding disjoint parameter groups.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Raised when a gradient or updated parameter stops being finite."""


class Adam:
    """Adam with bias correction; epsilon added outside the square root."""

    def __init__(self, params: list[Tensor], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g.astype(np.float64) ** 2)
            update = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data[...] = (p.data - update).astype(p.data.dtype)
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged("non-finite parameter after update")
