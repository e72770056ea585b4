"""Central finite-difference checking of the engine's gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int,
                 step: float = 1e-3) -> np.ndarray:
    x = inputs[index].data
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(*inputs).data.sum())
        flat[i] = orig - step
        lo = float(fn(*inputs).data.sum())
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def analytic_grads(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
        loss = out if out.size == 1 else out.sum()
    backward(loss, tape)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-3,
              rtol: float = 1e-4) -> list[float]:
    """Compare reverse-mode and central-difference gradients of sum(fn(*inputs)).

    Only inputs with ``requires_grad`` are checked. Returns the relative error
    per checked input and raises AssertionError if any exceeds `rtol`.
    """
    analytic = analytic_grads(fn, inputs)
    errors = []
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        err = relative_error(analytic[i], numeric_grad(fn, inputs, i, step))
        errors.append(err)
        if err >= rtol:
            raise AssertionError(f"input {i} {t.shape}: relative error {err:.3e} >= {rtol}")
    return errors
