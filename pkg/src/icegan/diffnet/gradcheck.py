"""Finite-difference verification of analytic gradients.

Central differences in float64. The loss function is re-evaluated from
scratch for each perturbed coordinate, so anything stateful (batch norm
running estimates) must be frozen or tolerated by the caller.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, gradients


def max_relative_error(loss_fn, wrt: list[Tensor], h: float = 1e-5) -> float:
    """Largest guarded relative error between analytic and numeric gradients.

    loss_fn: () -> scalar Tensor, closing over `wrt`.
    Error per coordinate: |a - n| / max(1, |a|, |n|), so coordinates where
    both gradients are tiny cannot dominate through cancellation noise.
    """
    for p in wrt:
        if p.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 parameters")
    analytic = gradients(loss_fn(), wrt)
    worst = 0.0
    for p, a in zip(wrt, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(loss_fn().data)
            flat[i] = keep - h
            dn = float(loss_fn().data)
            flat[i] = keep
            num = (up - dn) / (2.0 * h)
            an = float(a.reshape(-1)[i])
            err = abs(an - num) / max(1.0, abs(an), abs(num))
            if err > worst:
                worst = err
    return worst
