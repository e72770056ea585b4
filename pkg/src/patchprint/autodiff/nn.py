"""Layer objects holding parameters, plus a tiny Module base class."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor

DTYPE = np.float32


class Module:
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        """Trainable parameters only (frozen ones are skipped)."""
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (params.keys() | buffers.keys()) - state.keys()
        if strict and missing:
            raise KeyError(f"missing entries: {sorted(missing)}")
        for name, value in state.items():
            if name in params:
                target = params[name]
                if target.shape != value.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
                target.data = np.array(value, dtype=target.dtype)
            elif name in buffers:
                buffers[name][...] = value
            elif strict:
                raise KeyError(f"unexpected entry {name}")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for _, value in self._children():
            if isinstance(value, Tensor):
                value.requires_grad = flag
            elif isinstance(value, Module):
                value.requires_grad_(flag)
        return self


def parameter(data: np.ndarray, name: str) -> Tensor:
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True, name=name)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = parameter(_uniform(rng, bound, (n_out, n_in)), "weight")
        self.bias = parameter(_uniform(rng, bound, (n_out,)), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        fan_in = c_in * k * k
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = parameter(_uniform(rng, bound, (c_out, c_in, k, k)), "weight")
        self.bias = parameter(_uniform(rng, bound, (c_out,)), "bias")
        self.stride, self.pad = stride, pad

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 2):
        bound = 1.0 / math.sqrt(c_out * k * k)
        self.weight = parameter(_uniform(rng, bound, (c_in, c_out, k, k)), "weight")
        self.bias = parameter(_uniform(rng, bound, (c_out,)), "bias")
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride)


class BatchNorm(Module):
    """Batch norm for (N, C) or (N, C, H, W) inputs; running stats momentum 0.1.

    The first training batch initializes the running statistics outright
    (an EMA seeded with its first observation) instead of blending into the
    mean 0 / variance 1 placeholder, so short runs still get usable
    inference statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = parameter(np.ones(channels), "weight")
        self.bias = parameter(np.zeros(channels), "bias")
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.batches_seen = np.zeros(1, dtype=np.float32)
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        momentum = self.momentum
        if self.training:
            if self.batches_seen[0] == 0:
                momentum = 1.0
            self.batches_seen += 1
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, momentum, self.eps)


class CrossAttention(Module):
    """Spatial tokens attend to conditioning tokens; result is added residually.

    The conditioning vector is first projected to the feature width so that
    query, key and value all live in one d x d space.
    """

    def __init__(self, channels: int, ctx_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(channels)
        self.context_proj = Linear(ctx_dim, channels, rng)
        self.wq = parameter(_uniform(rng, bound, (channels, channels)), "wq")
        self.wk = parameter(_uniform(rng, bound, (channels, channels)), "wk")
        self.wv = parameter(_uniform(rng, bound, (channels, channels)), "wv")

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = ops.transpose(ops.reshape(x, (n, c, h * w)), (0, 2, 1))  # N, HW, C
        ctx = self.context_proj(context)  # N, S, C
        attended = ops.cross_attention(tokens, ctx, self.wq, self.wk, self.wv)
        back = ops.reshape(ops.transpose(attended, (0, 2, 1)), (n, c, h, w))
        return ops.add(x, back)
