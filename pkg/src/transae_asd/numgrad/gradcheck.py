"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic: float, numeric: float, abs_floor: float = 1e-8) -> float:
    diff = abs(analytic - numeric)
    if diff <= abs_floor:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    probe_count: int,
    h: float = 1e-4,
    seed: int = 0,
    abs_floor: float = 1e-8,
) -> float:
    """Compare backward-pass gradients with central differences.

    ``f`` is re-evaluated with no arguments and must read the current values
    of ``params``; it has to be deterministic. ``probe_count`` coordinates
    are drawn uniformly from the concatenation of all parameters. Returns
    the largest relative error seen (differences below ``abs_floor`` count
    as exact).
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.values.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(probe_count, offsets[-1]), replace=False)

    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[k])
        vals = params[k].values
        j = np.unravel_index(j, vals.shape)
        orig = vals[j]
        vals[j] = orig + h
        up = f().item()
        vals[j] = orig - h
        down = f().item()
        vals[j] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic[k][j], numeric, abs_floor))
    return worst
