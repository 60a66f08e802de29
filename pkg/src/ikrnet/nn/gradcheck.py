"""Central finite-difference oracle for the analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              seed: int = 0) -> float:
    """Compare backprop against central differences for every entry of ``inputs``.

    ``fn`` is re-evaluated after each perturbation, so it must read the
    current ``.data`` of the inputs.  Non-scalar outputs are contracted with
    a fixed random projection first.  Returns the worst relative error.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
    out = fn()
    proj = np.random.default_rng(seed).standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(fn().data * proj))

    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward(proj.astype(loss.dtype))
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
