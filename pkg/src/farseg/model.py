"""FarSeg network assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn

from .backbone import LEVELS, MultiBranchEncoder, build_backbone
from .decoder import LightweightDecoder
from .errors import ConfigError
from .relation import FSRelation


@dataclass
class BackboneConfig:
    preset: str = "tiny"
    widths: List[int] = field(default_factory=lambda: [16, 32, 64, 128])
    blocks: List[int] = field(default_factory=lambda: [1, 1, 1, 1])
    pretrained_path: Optional[str] = None


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    d: int = 256
    d_u: int = 256
    relation: bool = True  # False gives the FPN + light decoder baseline
    scale_aware: bool = True
    decoder_channels: int = 128
    num_classes: int = 16

    def validate(self) -> None:
        if self.backbone.preset not in ("tiny", "resnet50"):
            raise ConfigError(f"unknown backbone preset {self.backbone.preset!r}")
        for name in ("d", "d_u", "decoder_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be at least 2")


class FarSeg(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        bb = cfg.backbone
        backbone = build_backbone(bb.preset, bb.widths, bb.blocks, bb.pretrained_path)
        self.encoder = MultiBranchEncoder(backbone, cfg.d)
        self.relation = None
        if cfg.relation:
            self.relation = FSRelation(self.encoder.scene_channels, cfg.d, cfg.d_u, cfg.scale_aware)
        self.decoder = LightweightDecoder(cfg.d, cfg.decoder_channels, cfg.num_classes)

    def forward(self, images: torch.Tensor, return_intermediates: bool = False):
        feats, pyramid, c6 = self.encoder(images)
        rel = None
        if self.relation is not None:
            rel = self.relation(pyramid, c6)
            enhanced = rel.z
        else:
            enhanced = pyramid
        decoded = {i: self.decoder.decode_level(enhanced[i], i) for i in LEVELS}
        logits = self.decoder.aggregate(decoded)
        if not return_intermediates:
            return logits
        return {
            "logits": logits,
            "features": feats,
            "pyramid": pyramid,
            "scene": c6,
            "relation": rel,
            "decoded": decoded,
        }
