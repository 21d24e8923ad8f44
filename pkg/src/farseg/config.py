"""Experiment configuration: nested dataclasses loaded from YAML/JSON."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from .data.synth import SynthConfig
from .errors import ConfigError
from .loss import FaLossConfig
from .model import BackboneConfig, ModelConfig


@dataclass
class OptimConfig:
    initial_lr: float = 0.007
    momentum: float = 0.9
    weight_decay: float = 0.0001
    max_step: int = 60000
    power: float = 0.9
    grad_accum: int = 1

    def validate(self) -> None:
        if self.initial_lr <= 0 or self.max_step < 1 or self.power < 0 or self.grad_accum < 1:
            raise ConfigError("optim: initial_lr > 0, max_step >= 1, power >= 0, grad_accum >= 1 required")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("optim: momentum must be in [0, 1) and weight_decay >= 0")


@dataclass
class DataConfig:
    source: str = "synth"  # "synth" generates in memory; "dir" reads train_dir / val_dir
    train_dir: Optional[str] = None
    val_dir: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    val_images: int = 32
    window: int = 896
    stride: int = 512
    batch_size: int = 8
    augment: bool = True
    ignore_label: int = 255

    def validate(self) -> None:
        if self.source not in ("synth", "dir"):
            raise ConfigError(f"data.source must be 'synth' or 'dir', got {self.source!r}")
        if self.source == "dir" and not self.train_dir:
            raise ConfigError("data.train_dir is required when data.source == 'dir'")
        if self.window % 32 != 0 or self.window < 32:
            raise ConfigError("data.window must be a positive multiple of 32")
        if self.stride < 1 or self.batch_size < 1 or self.val_images < 0:
            raise ConfigError("data.stride and data.batch_size must be positive")
        if self.source == "synth":
            self.synth.validate()


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: FaLossConfig = field(default_factory=FaLossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    deterministic: bool = True
    log_every: int = 1
    val_every: Optional[int] = None  # default: every 10% of max_step
    checkpoint_every: Optional[int] = None  # default: same as val_every
    out_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.loss.validate()
        self.optim.validate()
        self.data.validate()
        if self.loss.ignore_label != self.data.ignore_label:
            raise ConfigError("loss.ignore_label and data.ignore_label must agree")
        if self.data.source == "synth" and self.data.synth.num_classes != self.model.num_classes:
            raise ConfigError("data.synth.num_classes must equal model.num_classes")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        return self

    @property
    def validation_interval(self) -> int:
        return self.val_every or max(1, self.optim.max_step // 10)

    @property
    def checkpoint_interval(self) -> int:
        return self.checkpoint_every or self.validation_interval

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _unwrap_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for key, value in data.items():
        tp = _unwrap_optional(hints[key])
        where = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, where)
        else:
            kwargs[key] = _coerce(tp, value, where)
    return cls(**kwargs)


def _coerce(tp, value, where):
    if value is None:
        return None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if typing.get_origin(tp) in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, where) for v in value]
    return value


def _deep_update(base: dict, update: dict) -> dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def tiny_profile() -> Dict[str, Any]:
    """Desk-scale defaults: annealing covers the first 1/6 of training."""
    return {
        "model": {"backbone": {"preset": "tiny", "widths": [16, 32, 64, 128], "blocks": [1, 1, 1, 1]},
                  "d": 64, "d_u": 64, "decoder_channels": 32, "num_classes": 4},
        "loss": {"gamma": 2.0, "annealing": "cosine", "annealing_step": 400, "normalize": True},
        "optim": {"max_step": 2000},
        "data": {"source": "synth", "window": 64, "stride": 64, "batch_size": 8, "val_images": 32,
                 "synth": {"num_images": 256, "image_size": 64, "num_classes": 4,
                           "target_foreground_ratio": 0.02}},
        "log_every": 10,
    }


def full_profile() -> Dict[str, Any]:
    return {
        "model": {"backbone": {"preset": "resnet50"}, "d": 256, "d_u": 256, "decoder_channels": 128,
                  "num_classes": 16},
        "loss": {"gamma": 2.0, "annealing": "cosine", "annealing_step": 10000, "decay_factor": 0.9},
        "optim": {"max_step": 60000},
        "data": {"source": "dir", "window": 896, "stride": 512, "batch_size": 8},
        "log_every": 20,
    }


PROFILES = {"tiny": tiny_profile, "full": full_profile}


def parse_override(text: str) -> Dict[str, Any]:
    """'a.b.c=value' -> {'a': {'b': {'c': value}}}; value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    out: Dict[str, Any] = {}
    node = out
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def make_config(data: Optional[Dict[str, Any]] = None, profile: Optional[str] = "tiny",
                overrides: Sequence[str] = ()) -> ExperimentConfig:
    merged: Dict[str, Any] = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        merged = PROFILES[profile]()
    if data:
        data = copy.deepcopy(data)
        data.pop("profile", None)
        _deep_update(merged, data)
    for text in overrides:
        _deep_update(merged, parse_override(text))
    return _build(ExperimentConfig, merged, "").validate()


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return make_config(data, data.get("profile", "tiny"), overrides)


def save_config(cfg: ExperimentConfig, path) -> None:
    """Persist the fully resolved config (no profile indirection)."""
    data = dict(cfg.to_dict())
    data["profile"] = None
    Path(path).write_text(yaml.safe_dump(data, sort_keys=True))
