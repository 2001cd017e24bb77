"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tape, Tensor

DEFAULT_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps coordinates whose true gradient is ~0 from dividing
    finite-difference round-off (~1e-11 at step 1e-5) by a vanishing scale.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    *,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = DEFAULT_FLOOR,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor. With ``max_entries`` set, each
    input is probed at that many coordinates drawn with ``seed``; otherwise
    every coordinate is probed.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        if out.size != 1:
            raise ContractError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
        tape.backward(out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        if max_entries is None or max_entries >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = f(*inputs).item()
            flat[i] = orig - step
            down = f(*inputs).item()
            flat[i] = orig
            numeric[n] = (up - down) / (2.0 * step)
        err = relative_error(analytic.reshape(-1)[idx], numeric, floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
