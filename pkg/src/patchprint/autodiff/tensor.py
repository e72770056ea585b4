"""Tensor and tape: the recording half of the reverse-mode engine.

Operations executed while a :class:`Tape` is active append one record each
(output node, input nodes, vector-Jacobian closure). Intermediate tensors are
referenced by node number only, so an activation stays in memory only while
some closure actually needs it. Leaves are held by reference so their
``.grad`` can be filled. Outside any tape nothing is recorded, which is how
inference runs. Tapes are thread-local.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import NotScalarError

_state = threading.local()
_node_ids = itertools.count(1)


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.node = 0  # nonzero once produced by a recorded op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(np.asarray(x, dtype=dtype))


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]
# An input slot: (node number, leaf tensor or None, requires_grad flag).
Slot = tuple[int, "Tensor | None", bool]


class Tape:
    """Ordered record of differentiable operations, in execution order."""

    def __init__(self):
        self.records: list[tuple[int, tuple[Slot, ...], Backward]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)

    def clear(self) -> None:
        self.records.clear()


def make_result(data: np.ndarray, inputs: Sequence[Tensor], fn: Backward) -> Tensor:
    """Wrap an op's output and record it if any input needs a gradient.

    `fn` must not close over the input Tensors themselves, only over the
    arrays it needs, or activations will be pinned for the tape's lifetime.
    """
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out.node = next(_node_ids)
        slots = tuple((t.node, None if t.node else t, t.requires_grad) for t in inputs)
        tape.records.append((out.node, slots, fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from `loss`.

    Leaf gradients accumulate, so calling this twice on the same tape doubles
    them.
    """
    if loss.data.size != 1:
        raise NotScalarError(f"loss must be a scalar, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if not loss.node:
        if loss.requires_grad:
            _accumulate(loss, seed)
        return
    grads: dict[int, np.ndarray] = {loss.node: seed}
    for node, slots, fn in reversed(tape.records):
        g = grads.pop(node, None)
        if g is None:
            continue
        for (inode, leaf, needs), gi in zip(slots, fn(g)):
            if gi is None or not needs:
                continue
            if leaf is not None:
                _accumulate(leaf, gi)
            else:
                prev = grads.get(inode)
                grads[inode] = gi if prev is None else prev + gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g
