"""Minimal reverse-mode differentiation engine on numpy arrays."""

from . import nn, ops
from .gradcheck import gradcheck
from .optim import Adam, AdamState, adam_step
from .tensor import Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "backward",
    "gradcheck",
    "nn",
    "ops",
]
