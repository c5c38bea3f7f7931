"""Run configuration and its ``key = value`` file format."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional

from .backbone import PLACEMENTS, BackboneConfig
from .exceptions import ConfigurationError

# fields that locate a run but do not change what is computed
_UNHASHED = ("output_dir",)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    output_dir: str = "runs/default"
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    placement: str = "early"
    use_input_attention: bool = True
    use_separation_norm: bool = True
    cbam_reduction: int = 4
    input_size: int = 32
    epochs: int = 50
    batch_classes: int = 4
    batch_per_class: int = 4
    lr: float = 1e-4
    weight_decay: float = 5e-4
    lr_gamma: float = 0.94
    lambda_proxy: float = 1.0
    lambda_softmax: float = 0.5
    normalize_targets: bool = False
    split_mode: str = "zsl"
    split_seed: int = 0
    init_seed: int = 0
    data_seed: int = 0
    kmeans_seed: int = 0
    dtype: str = "float32"
    eval_batch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.split_mode not in ("zsl", "gzsl"):
            raise ConfigurationError(f"split_mode must be zsl or gzsl, got {self.split_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(widths=self.widths, blocks_per_stage=self.blocks_per_stage,
                              use_input_attention=self.use_input_attention, placement=self.placement,
                              cbam_reduction=self.cbam_reduction, input_size=self.input_size)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def items(self, hashed_only: bool = False):
        for f in fields(self):
            if hashed_only and f.name in _UNHASHED:
                continue
            yield f.name, getattr(self, f.name)

    def to_text(self, hashed_only: bool = False) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items(hashed_only))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text(hashed_only=True).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _parse(value, types[key], key, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_text(f.read())
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(value: str, typ: str, key: str, lineno: int):
    try:
        if typ == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "tuple":
            return tuple(int(x) for x in value.split(",") if x.strip())
        return value
    except ValueError:
        raise ConfigurationError(f"line {lineno}: invalid value {value!r} for {key} ({typ})") from None
