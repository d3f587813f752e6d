"""Finite-difference validation of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tape import Tensor, backward, param


def grad_check(
    fn: Callable[[list[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    eps: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps a list of parameter tensors to a scalar tensor.  The relative
    error of an entry is ``|a - n| / max(|a|, |n|, 1e-8)``.  With
    ``max_entries`` set, a seeded random subset of entries is checked per
    parameter instead of all of them.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    arrays = [np.array(p, dtype=np.float64) for p in params]
    leaves = [param(a) for a in arrays]
    loss = fn(leaves)
    if not np.all(np.isfinite(loss.value)):
        raise ValueError("grad_check: function value is not finite")
    analytic = [g.copy() for g in backward(loss, leaves)]

    def value_at(arrs):
        out = fn([param(a) for a in arrs]).value
        if not np.all(np.isfinite(out)):
            raise ValueError("grad_check: function value is not finite")
        return float(out.reshape(()))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value_at(arrays)
            flat[i] = orig - eps
            f_minus = value_at(arrays)
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            ana = analytic[k].reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
