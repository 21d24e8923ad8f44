"""Light-weight decoder: per-level upsampling units, mean fusion, 1x1 classifier."""
from __future__ import annotations

from typing import Dict

import torch
from torch import nn
import torch.nn.functional as F

from .backbone import LEVELS
from .errors import ConfigError, DimensionError


class UpsampleUnit(nn.Module):
    """3x3 conv + BN + ReLU, optionally followed by 2x bilinear upsampling."""

    def __init__(self, in_ch: int, out_ch: int, upsample: bool):
        super().__init__()
        self.transform = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )
        self.upsample = upsample

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.transform(x)
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return x


def num_upsample_units(level: int) -> int:
    if level not in LEVELS:
        raise ConfigError(f"decoder level must be one of {LEVELS}, got {level}")
    return level - 2


class LevelDecoder(nn.Module):
    def __init__(self, level: int, in_ch: int, out_ch: int):
        super().__init__()
        n = num_upsample_units(level)
        if n == 0:
            units = [UpsampleUnit(in_ch, out_ch, upsample=False)]
        else:
            units = [UpsampleUnit(in_ch if k == 0 else out_ch, out_ch, upsample=True) for k in range(n)]
        self.level = level
        self.units = nn.Sequential(*units)

    @property
    def num_upsampling(self) -> int:
        return sum(1 for u in self.units if u.upsample)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.units(x)


class LightweightDecoder(nn.Module):
    def __init__(self, in_channels: int, out_channels: int = 128, num_classes: int = 16):
        super().__init__()
        if out_channels < 1:
            raise ConfigError("decoder width must be at least 1")
        if num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        self.levels = nn.ModuleDict({str(i): LevelDecoder(i, in_channels, out_channels) for i in LEVELS})
        self.classifier = nn.Conv2d(out_channels, num_classes, 1)

    def decode_level(self, z: torch.Tensor, level: int) -> torch.Tensor:
        num_upsample_units(level)
        return self.levels[str(level)](z)

    def aggregate(self, decoded: Dict[int, torch.Tensor]) -> torch.Tensor:
        maps = [decoded[i] for i in LEVELS]
        size = maps[0].shape[-2:]
        if any(m.shape[-2:] != size for m in maps):
            raise DimensionError(f"decoded levels disagree in size: {[tuple(m.shape[-2:]) for m in maps]}")
        fused = torch.stack(maps, dim=0).mean(dim=0)
        logits = self.classifier(fused)
        return F.interpolate(logits, scale_factor=4, mode="bilinear", align_corners=False)

    def forward(self, features: Dict[int, torch.Tensor]) -> torch.Tensor:
        return self.aggregate({i: self.decode_level(features[i], i) for i in LEVELS})
