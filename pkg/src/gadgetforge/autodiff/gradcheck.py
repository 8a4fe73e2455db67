"""Central-difference gradient checking against the reverse sweep."""
from __future__ import annotations

import json
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, backward, current_tape, no_grad


def _coords(t: Tensor, max_coords: Optional[int], rng) -> list:
    n = t.data.size
    if max_coords is None or n <= max_coords:
        flat = range(n)
    else:
        flat = sorted(rng.choice(n, size=max_coords, replace=False).tolist())
    return [np.unravel_index(i, t.shape) for i in flat]


def grad_check(
    f: Callable[..., Tensor],
    x: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
    trace_path=None,
    tol: float = 1e-4,
) -> float:
    """Max relative error between backward() and central differences.

    ``f(*x)`` must build a scalar Tensor deterministically. Each coordinate's
    error is |a - n| / max(1, |a|, |n|). ``max_coords`` samples that many
    coordinates per tensor (all when None). When the error reaches ``tol``
    and ``trace_path`` is set, the recorded op trace is written there as JSON.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.grad = None
    loss = f(*xs)
    trace = current_tape().trace() if trace_path is not None else None
    analytic = backward(loss, wrt=xs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = None
    with no_grad():
        for k, (t, a) in enumerate(zip(xs, analytic)):
            for idx in _coords(t, max_coords, rng):
                orig = t.data[idx]
                t.data[idx] = orig + h
                fp = f(*xs).item()
                t.data[idx] = orig - h
                fm = f(*xs).item()
                t.data[idx] = orig
                num = (fp - fm) / (2.0 * h)
                an = float(a[idx])
                err = abs(an - num) / max(1.0, abs(an), abs(num))
                if err > worst:
                    worst, worst_at = err, (k, tuple(int(i) for i in idx), an, num)
    if trace_path is not None and worst >= tol:
        with open(trace_path, "w", encoding="utf-8") as fh:
            json.dump({"max_rel_error": worst, "worst": worst_at, "ops": trace}, fh, indent=1)
    return worst
