"""Convolutional attention layers: CBAM blocks and the input-attention gate."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .exceptions import ConfigurationError, ShapeError
from .nn import Conv2d, Module, Parameter, kaiming_normal
from .tensor import Tensor, concat


class CbamBlock(Module):
    """Channel attention followed by spatial attention.

    The channel MLP (C -> C/r -> C, ReLU between) is shared between the
    average- and max-pooled descriptors; the spatial gate is a 7x7 conv over
    the stacked channel-max / channel-mean maps.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 16, spatial_kernel: int = 7):
        if reduction < 1 or channels % reduction:
            raise ConfigurationError(
                f"CBAM: channel count {channels} is not divisible by reduction ratio {reduction}")
        hidden = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.mlp_w1 = Parameter(kaiming_normal(rng, (hidden, channels), channels))
        self.mlp_b1 = Parameter(np.zeros(hidden))
        self.mlp_w2 = Parameter(kaiming_normal(rng, (channels, hidden), hidden))
        self.mlp_b2 = Parameter(np.zeros(channels))
        self.spatial = Conv2d(2, 1, spatial_kernel, rng, padding=spatial_kernel // 2, bias=True)

    def _mlp(self, v: Tensor) -> Tensor:
        h = F.relu(F.linear(v, self.mlp_w1, self.mlp_b1))
        return F.linear(h, self.mlp_w2, self.mlp_b2)

    def channel_gate(self, f: Tensor) -> Tensor:
        n, c = f.shape[:2]
        avg = F.global_avg_pool(f).reshape(n, c)
        mx = f.reshape(n, c, -1).max(axis=2)
        return F.sigmoid(self._mlp(avg) + self._mlp(mx)).reshape(n, c, 1, 1)

    def spatial_gate(self, f: Tensor) -> Tensor:
        stacked = concat([F.channel_max(f), F.channel_mean(f)], axis=1)
        return F.sigmoid(self.spatial(stacked))

    def forward(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise ShapeError(f"CBAM configured for {self.channels} channels, got input {f.shape}", dim="channels")
        f = f * self.channel_gate(f)
        return f * self.spatial_gate(f)


class InputAttention(Module):
    """Elementwise gate ``F * sigmoid(conv_b(leaky_relu(conv_a(F))))``.

    Both convs are 3x3, C -> C, padding 1, with bias.  No pooling is used so
    the gate keeps full spatial and channel resolution.
    """

    def __init__(self, channels: int, rng: np.random.Generator, slope: float = 0.01):
        self.channels = channels
        self.slope = slope
        self.conv_a = Conv2d(channels, channels, 3, rng, padding=1, bias=True)
        self.conv_b = Conv2d(channels, channels, 3, rng, padding=1, bias=True)

    def gate(self, f: Tensor) -> Tensor:
        return F.sigmoid(self.conv_b(F.leaky_relu(self.conv_a(f), self.slope)))

    def forward(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise ShapeError(f"input attention configured for {self.channels} channels, got input {f.shape}",
                             dim="channels")
        return f * self.gate(f)


def cbam_forward(block: CbamBlock, f: Tensor) -> Tensor:
    return block(f)


def ia_forward(ia: InputAttention, f: Tensor) -> Tensor:
    return ia(f)
