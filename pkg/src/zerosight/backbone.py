"""ResNet-style fully convolutional feature extractor with attention placement."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import functional as F
from .attention import CbamBlock, InputAttention
from .exceptions import ConfigurationError
from .nn import BatchNorm, Conv2d, Module
from .tensor import Tensor, default_dtype, no_grad

PLACEMENTS = ("none", "early", "late", "everywhere")

# inputs smaller than this use a stride-1 stem without max pooling
FULL_STEM_MIN_SIZE = 64


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    use_input_attention: bool = False
    placement: str = "none"
    cbam_reduction: int = 4
    input_size: int = 32
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    @property
    def full_stem(self) -> bool:
        return self.input_size >= FULL_STEM_MIN_SIZE

    def validate(self) -> None:
        if not self.widths:
            raise ConfigurationError("at least one stage width is required")
        for i, w in enumerate(self.widths):
            if w <= 0:
                raise ConfigurationError(f"stage {i} has non-positive width {w}")
        if self.blocks_per_stage < 1:
            raise ConfigurationError("blocks_per_stage must be >= 1")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.input_size < 1 or self.in_channels < 1:
            raise ConfigurationError("input_size and in_channels must be positive")

    def stage_has_cbam(self, stage: int) -> bool:
        last = len(self.widths) - 1
        return {"none": False, "early": stage == 0, "late": stage == last, "everywhere": True}[self.placement]


class BasicBlock(Module):
    """Two 3x3 conv/norm layers plus a shortcut; optional CBAM on the branch."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator,
                 cbam_reduction: Optional[int] = None):
        self.stride = stride
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1)
        self.norm1 = BatchNorm(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1)
        self.norm2 = BatchNorm(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.down_conv = Conv2d(in_ch, out_ch, 1, rng, stride=stride)
            self.down_norm = BatchNorm(out_ch)
        if cbam_reduction is not None:
            self.cbam = CbamBlock(out_ch, rng, reduction=cbam_reduction)

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        if hasattr(self, "cbam"):
            out = self.cbam(out)
        residual = self.down_norm(self.down_conv(x)) if hasattr(self, "down_conv") else x
        return F.relu(out + residual)


class Backbone(Module):
    def __init__(self, config: BackboneConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        w0 = config.widths[0]
        self.stem_conv = Conv2d(config.in_channels, w0, 7, rng, stride=2 if config.full_stem else 1, padding=3)
        if config.use_input_attention:
            self.ia = InputAttention(w0, rng)
        self.stem_norm = BatchNorm(w0)
        self.stages = []
        in_ch, idx = w0, 0
        for s, width in enumerate(config.widths):
            names = []
            for b in range(config.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                red = config.cbam_reduction if config.stage_has_cbam(s) else None
                setattr(self, f"block{idx}", BasicBlock(in_ch, width, stride, rng, red))
                names.append(f"block{idx}")
                in_ch, idx = width, idx + 1
            self.stages.append(names)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def _check_extent(self, h: int, w: int) -> None:
        cfg = self.config
        if (h >= FULL_STEM_MIN_SIZE) != cfg.full_stem or (w >= FULL_STEM_MIN_SIZE) != cfg.full_stem:
            raise ConfigurationError(
                f"input extent {h}x{w} does not match the stem built for input_size={cfg.input_size}")
        if cfg.full_stem:
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
        for s in range(1, len(cfg.widths)):
            if min(h, w) < 2:
                raise ConfigurationError(
                    f"spatial extent collapses before stage {s}: {h}x{w} cannot be downsampled further")
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1

    def feature_map(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ConfigurationError(
                f"expected NCHW input with {self.config.in_channels} channels, got {x.shape}")
        self._check_extent(x.shape[2], x.shape[3])
        out = self.stem_conv(x)
        if hasattr(self, "ia"):
            out = self.ia(out)
        out = F.relu(self.stem_norm(out))
        if self.config.full_stem:
            out = F.max_pool2d(out, 3, stride=2, padding=1)
        for names in self.stages:
            for name in names:
                out = getattr(self, name)(out)
        return out

    def forward(self, x: Tensor) -> Tensor:
        fmap = self.feature_map(x)
        return F.global_avg_pool(fmap).reshape(fmap.shape[0], fmap.shape[1])

    def cbam_groups(self) -> list[str]:
        return [f"{name}.cbam" for names in self.stages for name in names
                if hasattr(getattr(self, name), "cbam")]


def build(config: BackboneConfig, seed: int = 0, dtype=np.float32) -> Backbone:
    """Construct a backbone with deterministic initialization from ``seed``."""
    with default_dtype(dtype):
        return Backbone(config, seed)


def embed(model: Backbone, batch, mode: str = "infer") -> Tensor:
    """Embed an NCHW batch; ``mode`` is ``"train"`` (batch statistics) or ``"infer"``."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch), dtype=model.stem_conv.weight.dtype)
    model.train(mode == "train")
    if mode == "infer":
        with no_grad():
            return model(x)
    return model(x)
