"""Parameterized layers and the module container."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import InvalidSpec
from . import tensor as T
from .tensor import Tensor

ALLOWED_KERNELS = (1, 3, 5, 7, 9)


def _param(a: np.ndarray) -> Tensor:
    return Tensor(a, requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameters are discovered from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in self.__dict__.items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


class Conv2d(Module):
    """Same-size convolution: padding is k // 2 for odd k."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1):
        if kernel % 2 == 0 or kernel < 1:
            raise InvalidSpec(f"kernel size must be odd, got {kernel}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, kernel // 2
        fan_in = in_channels * kernel * kernel
        self.weight = _param(kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = _param(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    """2x upsampling transposed convolution (kernel 2, stride 2)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 2):
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.weight = _param(kaiming_uniform(rng, (in_channels, out_channels, kernel, kernel), in_channels))
        self.bias = _param(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.kernel)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = _param(kaiming_uniform(rng, (out_features, in_features), in_features))
        self.bias = _param(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def count_params(net: Module) -> int:
    """Total weight and bias elements."""
    return int(sum(p.data.size for p in net.parameters()))
