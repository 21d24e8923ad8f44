"""Multi-branch encoder: backbone features, FPN top-down pathway, scene pooling."""
from __future__ import annotations

from typing import Dict, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError

LEVELS = (2, 3, 4, 5)


def check_input_size(x: torch.Tensor, multiple: int = 32) -> None:
    if x.dim() != 4:
        raise DimensionError(f"expected a B x C x H x W batch, got shape {tuple(x.shape)}")
    for axis, size in (("height", x.shape[-2]), ("width", x.shape[-1])):
        if size % multiple != 0:
            raise DimensionError(f"input {axis} {size} is not divisible by {multiple}")


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class TinyResNet(nn.Module):
    """Small residual network with four stages at strides 4, 8, 16 and 32."""

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 128), blocks: Sequence[int] = (1, 1, 1, 1)):
        super().__init__()
        if len(widths) != 4 or len(blocks) != 4:
            raise ConfigError("tiny backbone needs exactly four stage widths and block counts")
        if any(w < 1 for w in widths) or any(b < 1 for b in blocks):
            raise ConfigError("stage widths and block counts must be positive")
        self.channels = tuple(int(w) for w in widths)
        stem_ch = self.channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_ch, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(stem_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem_ch, stem_ch, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(stem_ch),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = stem_ch
        for idx, (width, count) in enumerate(zip(self.channels, blocks)):
            stride = 1 if idx == 0 else 2
            layers = [BasicBlock(in_ch, width, stride)]
            layers += [BasicBlock(width, width) for _ in range(count - 1)]
            stages.append(nn.Sequential(*layers))
            in_ch = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> Dict[int, torch.Tensor]:
        out = self.stem(x)
        feats = {}
        for level, stage in zip(LEVELS, self.stages):
            out = stage(out)
            feats[level] = out
        return feats


class ResNet50Backbone(nn.Module):
    """torchvision ResNet-50 trunk. Weights are random unless a state dict path is given."""

    channels = (256, 512, 1024, 2048)

    def __init__(self, pretrained_path: str | None = None):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        if pretrained_path:
            state = torch.load(pretrained_path, map_location="cpu")
            net.load_state_dict(state, strict=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])

    def forward(self, x: torch.Tensor) -> Dict[int, torch.Tensor]:
        out = self.stem(x)
        feats = {}
        for level, stage in zip(LEVELS, self.stages):
            out = stage(out)
            feats[level] = out
        return feats


def build_backbone(preset: str = "tiny", widths=(16, 32, 64, 128), blocks=(1, 1, 1, 1),
                   pretrained_path: str | None = None) -> nn.Module:
    if preset == "tiny":
        return TinyResNet(widths, blocks)
    if preset == "resnet50":
        return ResNet50Backbone(pretrained_path)
    raise ConfigError(f"unknown backbone preset {preset!r} (expected 'tiny' or 'resnet50')")


def extract_features(backbone: nn.Module, images: torch.Tensor) -> Dict[int, torch.Tensor]:
    check_input_size(images)
    if not torch.isfinite(images).all():
        raise ValueError("input images contain non-finite values")
    return backbone(images)


class FPN(nn.Module):
    """Top-down pathway: P5 = lateral(C5), Pi = lateral(Ci) + nearest2x(P(i+1)).

    Lateral connections are plain 1x1 convolutions with bias.
    """

    def __init__(self, in_channels: Sequence[int], d: int = 256):
        super().__init__()
        if len(in_channels) != len(LEVELS):
            raise ConfigError("FPN expects channel counts for levels 2..5")
        if d < 1:
            raise ConfigError("FPN channel count d must be positive")
        self.d = d
        self.lateral = nn.ModuleDict({str(i): nn.Conv2d(c, d, 1) for i, c in zip(LEVELS, in_channels)})

    def forward(self, feats: Dict[int, torch.Tensor]) -> Dict[int, torch.Tensor]:
        missing = [i for i in LEVELS if i not in feats]
        if missing:
            raise DimensionError(f"missing backbone levels {missing}")
        pyramid = {5: self.lateral["5"](feats[5])}
        for i in (4, 3, 2):
            top = F.interpolate(pyramid[i + 1], scale_factor=2, mode="nearest")
            pyramid[i] = self.lateral[str(i)](feats[i]) + top
        return {i: pyramid[i] for i in LEVELS}


def scene_pool(c5: torch.Tensor) -> torch.Tensor:
    """Global average pooling of C5 into one scene vector per image (B x C)."""
    if c5.dim() != 4:
        raise DimensionError(f"C5 must be B x C x H x W, got {tuple(c5.shape)}")
    return c5.mean(dim=(2, 3))


class MultiBranchEncoder(nn.Module):
    def __init__(self, backbone: nn.Module, d: int = 256):
        super().__init__()
        self.backbone = backbone
        self.fpn = FPN(backbone.channels, d)

    @property
    def scene_channels(self) -> int:
        return self.backbone.channels[-1]

    def forward(self, images: torch.Tensor):
        feats = extract_features(self.backbone, images)
        return feats, self.fpn(feats), scene_pool(feats[5])
