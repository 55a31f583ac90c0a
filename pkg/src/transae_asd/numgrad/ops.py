"""Differentiable ops.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_output

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PROB_CLAMP = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output(a.values + b.values, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_output(a.values - b.values, "sub", (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_output(a.values * c, "scale", (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be a 2-D weight shared across the leading axes of ``a``, or a
    tensor with the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ, {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    if bv.ndim == 2:
        # fold leading axes so BLAS sees one large GEMM
        a2 = av.reshape(-1, av.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bv.T).reshape(av.shape), a2.T @ g2

        out = (a2 @ bv).reshape(av.shape[:-1] + (bv.shape[-1],))
        return make_output(out, "matmul", (a, b), backward)

    def backward(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return make_output(av @ bv, "matmul", (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return make_output(a.values * mask, "relu", (a,), lambda g: (g * mask,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return make_output(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_output(
        np.transpose(a.values, axes), "transpose", (a,), lambda g: (np.transpose(g, inverse),)
    )


def softmax(a: Tensor) -> Tensor:
    z = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_output(s, "softmax", (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply an elementwise affine map."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {a.shape} vs gain {gain.shape} / bias {bias.shape}")
    mu = a.values.mean(axis=-1, keepdims=True)
    xc = a.values - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    out = xhat * gain.values + bias.values

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx = g * gain.values
        g_in = inv_std * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return g_in, g_gain, g_bias

    return make_output(out, "layer_norm", (a, gain, bias), backward)


class BatchNormState:
    """Running statistics for :func:`batch_norm`."""

    def __init__(self, features: int):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)


def batch_norm(
    a: Tensor,
    gain: Tensor,
    bias: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Normalize each feature (last axis) over all leading axes.

    In training mode the batch statistics are used and folded into the
    running estimates as ``running = momentum * running + (1 - momentum) * batch``.
    In eval mode the running estimates are used and nothing is updated.
    """
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,) or state.running_mean.shape != (d,):
        raise ShapeError(f"batch_norm: input {a.shape} vs gain {gain.shape} / bias {bias.shape}")
    lead = tuple(range(a.ndim - 1))
    x = a.values
    if training:
        mu = x.mean(axis=lead)
        var = x.var(axis=lead)
        state.running_mean = momentum * state.running_mean + (1.0 - momentum) * mu
        state.running_var = momentum * state.running_var + (1.0 - momentum) * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = xhat * gain.values + bias.values

    def backward(g):
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx = g * gain.values
        if training:
            g_in = inv_std * (
                gx - gx.mean(axis=lead, keepdims=True) - xhat * (gx * xhat).mean(axis=lead, keepdims=True)
            )
        else:
            g_in = gx * inv_std
        return g_in, g_gain, g_bias

    return make_output(out, "batch_norm", (a, gain, bias), backward)


def mean_pool(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    n = a.shape[axis]
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return make_output(a.values.mean(axis=axis), "mean_pool", (a,), backward)


def max_pool(a: Tensor, axis: int) -> Tensor:
    """Max over ``axis``; ties route the gradient to the lowest index."""
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.values, axis=axis), axis)
    out = np.take_along_axis(a.values, idx, axis=axis).squeeze(axis)
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape)
        np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return make_output(out, "max_pool", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_output(
        np.concatenate([t.values for t in tensors], axis=axis), "concat", tuple(tensors), backward
    )


def mse_loss(pred: Tensor, target, per_sample: str = "sum") -> Tensor:
    """Squared error, reduced over the last axis then averaged over the rest.

    ``per_sample="sum"`` gives the squared L2 norm of each row (the
    reconstruction loss); ``"mean"`` divides it by the row length.
    """
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.values - target.values
    rows = diff.size // diff.shape[-1]
    denom = rows * (diff.shape[-1] if per_sample == "mean" else 1)
    value = np.array((diff * diff).sum() / denom)

    def backward(g):
        gp = (2.0 / denom) * g * diff
        return gp, -gp

    return make_output(value, "mse_loss", (pred, target), backward)


def cross_entropy_loss(probs: Tensor, onehot, clamp: float = PROB_CLAMP) -> Tensor:
    """Batch mean of ``-sum(onehot * log(max(probs, clamp)))`` over the last axis."""
    onehot = np.asarray(onehot.values if isinstance(onehot, Tensor) else onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ShapeError(f"cross_entropy_loss: probabilities {probs.shape} vs targets {onehot.shape}")
    p = np.maximum(probs.values, clamp)
    rows = p.size // p.shape[-1]
    value = np.array(-(onehot * np.log(p)).sum() / rows)

    def backward(g):
        gp = -g * onehot / p / rows
        gp[probs.values < clamp] = 0.0
        return (gp,)

    return make_output(value, "cross_entropy_loss", (probs,), backward)


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return make_output(
        np.array(a.values.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )
