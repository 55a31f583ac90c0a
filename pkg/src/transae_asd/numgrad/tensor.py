"""Tensor and tape primitives for the reverse-mode engine.

Every differentiable op creates a new :class:`Tensor` and, when a tape is
active and at least one input requires a gradient, appends a node to that
tape. ``Tape.backward`` then replays the nodes in reverse order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class EngineFault(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "tape_id")

    _counter = 0

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(self.values) if requires_grad else None
        self.name = name
        Tensor._counter += 1
        self.tape_id = Tensor._counter

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded. ``backward`` may run once per recording; call :meth:`reset`
    to reuse the tape.
    """

    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise RuntimeError("backward already ran on this tape; call reset() first")
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise RuntimeError("tape is empty")
        self.consumed = True

        # intermediate grads live here; parameter grads accumulate in .grad
        grads: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.values)}
        for node in reversed(self.nodes):
            g_out = grads.pop(node.output.tape_id, None)
            if g_out is None:
                continue
            g_ins = node.backward(g_out)
            for t, g in zip(node.inputs, g_ins):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is not None and _is_leaf(t):
                    t.grad += g
                elif t.tape_id in grads:
                    grads[t.tape_id] = grads[t.tape_id] + g
                else:
                    grads[t.tape_id] = g


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _is_leaf(t: Tensor) -> bool:
    # leaves are created by parameter(); op outputs carry grad=None
    return t.grad is not None


def make_output(values: np.ndarray, op: str, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, checking finiteness and recording it on the tape."""
    if not np.all(np.isfinite(values)):
        raise EngineFault(f"non-finite values produced by {op}")
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = needs_grad
    out.grad = None
    out.name = None
    Tensor._counter += 1
    out.tape_id = Tensor._counter
    if needs_grad:
        tape.record(Node(op, tuple(inputs), out, backward))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
