"""Adam with bias correction and a cosine-annealed learning rate."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Parameter


def cosine_lr(step: int, total_steps: int, lr_max: float = 1e-3, lr_min: float = 5.12e-5) -> float:
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    w = 0.5 * (1.0 + math.cos(math.pi * step / total_steps)) if total_steps else 1.0
    # written as a convex combination so both endpoints come out exactly
    return lr_max * w + lr_min * (1.0 - w)


def adam_step(params: list[Parameter], lr: float, t: int, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update from each parameter's ``grad``; ``t`` starts at 1."""
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        if p.grad.shape != p.value.shape:
            raise ValueError(f"{p.name}: gradient shape {p.grad.shape} != parameter shape {p.value.shape}")
        dt = p.value.dtype.type
        g = p.grad
        p.m = dt(beta1) * p.m + dt(1 - beta1) * g
        p.v = dt(beta2) * p.v + dt(1 - beta2) * g * g
        update = (p.m / dt(c1)) / (np.sqrt(p.v / dt(c2)) + dt(eps))
        p.value = (p.value - dt(lr) * update).astype(p.value.dtype)
