"""Small layer/module system on top of the tensor core.

A ``Module`` tracks parameters (Tensors with ``requires_grad``) and
buffers (plain arrays such as batch-norm running statistics) by walking
its attributes in insertion order, so parameter naming is deterministic.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None) -> np.ndarray:
    """Normal(0, std) samples redrawn until within +/-2 std."""
    dtype = dtype or T.default_dtype()
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Module:
    """Base class with recursive parameter/buffer discovery and train/eval mode."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
        for name, child in self._children():
            out.extend(child.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + name, buf) for name, buf in self._buffers.items()]
        for name, child in self._children():
            out.extend(child.named_buffers(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self) -> "Module":
        self.training = True
        for _, child in self._children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for _, child in self._children():
            child.eval()
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map over the last axis. Bias is off where a BN follows."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(truncated_normal(rng, (in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=T.default_dtype()), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """3x3 stride-1 zero-padded convolution over channels-last feature maps."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 padding: int = 1, bias: bool = False,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.padding = padding
        self.weight = Tensor(truncated_normal(rng, (out_channels, in_channels, kernel, kernel)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=T.default_dtype()), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_nhwc(x, self.weight, self.bias, padding=self.padding)


class BatchNorm(Module):
    """Batch norm over one channel axis; time steps arrive merged into batch."""

    def __init__(self, num_features: int, channel_axis: int = -1,
                 momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channel_axis = channel_axis
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features, dtype=T.default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=T.default_dtype()), requires_grad=True)
        self.running_mean = self.register_buffer("running_mean", np.zeros(num_features, dtype=np.float64))
        self.running_var = self.register_buffer("running_var", np.ones(num_features, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           channel_axis=self.channel_axis, training=self.training,
                           momentum=self.momentum, eps=self.eps)
