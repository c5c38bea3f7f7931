"""Minimal layer containers with named, ordered parameters."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .exceptions import ConfigurationError, ShapeError
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor that is trained by an optimizer."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype or get_default_dtype())


class Module:
    """Parameter container.

    Parameters, buffers and sub-modules are discovered from instance
    attributes in assignment order, which makes parameter names and their
    order a pure function of construction.
    """

    _buffer_names: tuple = ()
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            value = getattr(self, name)
            if value is not None:
                yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters(prefix))
        state.update(self.named_buffers(prefix))
        return state

    def load_state_dict(self, state, prefix: str = "", strict: bool = True) -> None:
        expected = set()
        for name, p in self.named_parameters(prefix):
            expected.add(name)
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}", dim=name)
            p.data = value.astype(p.dtype)
        for m_prefix, m in self._named_modules(prefix):
            for b in m._buffer_names:
                key = f"{m_prefix}{b}"
                expected.add(key)
                if key in state:
                    setattr(m, b, np.array(state[key], dtype=m._buffer_dtype()))
                    m._on_buffer_loaded(b)
        if strict:
            extra = {k for k in state if k.startswith(prefix)} - expected
            if extra:
                raise KeyError(f"unexpected entries: {sorted(extra)}")

    def _named_modules(self, prefix=""):
        yield prefix, self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")

    def _buffer_dtype(self):
        params = self.parameters()
        return params[0].dtype if params else get_default_dtype()

    def _on_buffer_loaded(self, name: str) -> None:
        pass

    def astype(self, dtype) -> "Module":
        dtype = np.dtype(dtype)
        for m in self.modules():
            for name, value in vars(m).items():
                if isinstance(value, Parameter):
                    value.data = value.data.astype(dtype)
                    value.grad = None
            for b in m._buffer_names:
                v = getattr(m, b)
                if v is not None:
                    setattr(m, b, v.astype(dtype))
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = False):
        if in_channels < 1 or out_channels < 1:
            raise ConfigurationError(f"conv widths must be positive, got {in_channels}->{out_channels}")
        self.in_channels = in_channels
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Batch normalization over the channel axis of (N, C) or (N, C, H, W) inputs."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=self.gamma.dtype)
        self.running_var = np.ones(channels, dtype=self.gamma.dtype)
        self.recorded = False

    def _on_buffer_loaded(self, name):
        self.recorded = True

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            out = F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               training=True, momentum=self.momentum, eps=self.eps)
            self.recorded = True
            return out
        if not self.recorded:
            raise ConfigurationError("batch norm used in inference mode before any running statistics were recorded")
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=False, eps=self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        std = 1.0 / np.sqrt(in_features)
        self.weight = Parameter((rng.standard_normal((out_features, in_features)) * std).astype(get_default_dtype()))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


def default_rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(seed)
