"""Shared assertion helpers for gradient checks."""

from __future__ import annotations

import numpy as np


def max_rel_error(analytic, numeric, floor: float = 1e-7) -> float:
    """Worst elementwise relative error; entries below `floor` in both
    arrays compare against the floor instead of blowing up."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def model_gradient_vs_fd(model, x, y, loss_fn, h: float = 1e-5) -> float:
    """Backpropagate loss_fn(model(x), y) and compare every parameter's
    gradient against central finite differences; returns the worst relative
    error across all parameters."""
    from vitalcast.engine import Tensor, finite_difference_gradient

    params = model.parameters()
    for p in params:
        p.grad = None
    loss = loss_fn(model.forward(Tensor(x)), y)
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        original = p.data.copy()

        def f(values, _p=p):
            _p.data[...] = values
            out = loss_fn(model.forward(Tensor(x)), y).item()
            _p.data[...] = original
            return out

        numeric = finite_difference_gradient(f, original, h)
        p.data[...] = original
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst
