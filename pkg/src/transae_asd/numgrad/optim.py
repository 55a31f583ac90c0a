"""Adam optimizer and weight initialisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor, parameter


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Only the names present in ``params`` are touched; moments of any other
    parameter tracked by ``state`` are left as they were.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-a, a, size=(fan_in, fan_out)), name=name)
