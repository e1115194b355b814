"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def analytic_grads(model_fn: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = model_fn()
    backward(loss, tape)
    out = {name: (p.grad if p.grad is not None else np.zeros(p.shape)).copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()
    return out


def grad_check_report(model_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                      max_elements: int | None = None,
                      rng: np.random.Generator | None = None) -> dict[str, float]:
    """Max relative error per parameter.

    The relative error of one element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``max_elements`` limits how many elements of each parameter are probed
    (sampled with ``rng``); by default every element is checked.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    grads = analytic_grads(model_fn, params)
    report = {}
    for name, p in params.items():
        ga = grads[name]
        if not np.all(np.isfinite(ga)):
            raise FloatingPointError(f"non-finite analytic gradient for parameter {name!r}")
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = model_fn().item()
            flat[i] = orig - h
            down = model_fn().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing parameter {name!r}[{i}]")
            num = (up - down) / (2.0 * h)
            ana = ga.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def grad_check(model_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5, **kw) -> float:
    """Max relative error between tape and finite-difference gradients over all parameters."""
    return max(grad_check_report(model_fn, params, h, **kw).values(), default=0.0)
