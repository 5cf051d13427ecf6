from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, DimensionError, Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """lr * 0.5 * (1 + cos(pi * step / total_steps)), with step clipped to the horizon."""
    if total_steps <= 0:
        return base_lr
    frac = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamWState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    total_steps: int = 0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, Tensor],
               state: AdamWState) -> dict[str, Tensor]:
    """One decoupled-weight-decay Adam update.

    Returns fresh grad-enabled tensors; ``state`` is advanced in place.
    The learning rate for update t (1-based) follows the cosine schedule
    evaluated at t - 1, so the first update uses the full base rate.
    """
    missing = [k for k in params if k not in grads]
    if missing:
        raise ContractError(f"adamw_step: no gradient for {', '.join(missing)}")
    state.step += 1
    t = state.step
    lr = cosine_lr(state.lr, t - 1, state.total_steps)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.shape:
            raise DimensionError(f"adamw_step: gradient {g.shape} vs parameter {p.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        new = p.data * (1.0 - lr * state.weight_decay)
        new = new - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor(new, grad_enabled=True)
    return out
