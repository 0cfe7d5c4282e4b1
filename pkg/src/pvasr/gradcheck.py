"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NotScalar
from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float,
                 entries: np.ndarray | None = None) -> np.ndarray:
    """Central differences for ``inputs[index]``; only flat ``entries`` if given (others stay 0)."""
    x = inputs[index]
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in (range(flat.size) if entries is None else entries):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(*inputs).item()
            flat[i] = orig - eps
            fm = f(*inputs).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
               floor: float = 1e-8, max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences over all inputs.

    ``f`` must return a scalar tensor. Every input with ``requires_grad``
    is perturbed elementwise; the others are held fixed. ``max_entries``
    caps the perturbed entries per input to a seeded random subset, which
    keeps checks of whole models affordable.
    """
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise NotScalar(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        entries = None
        if max_entries is not None and x.size > max_entries:
            entries = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        numeric = numeric_grad(f, inputs, i, eps, entries)
        if entries is not None:
            analytic, numeric = analytic.reshape(-1)[entries], numeric.reshape(-1)[entries]
        if analytic.size:
            worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst
