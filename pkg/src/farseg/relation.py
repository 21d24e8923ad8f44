"""Foreground-scene relation module.

Each pyramid level v_i is projected into a shared manifold, compared with a
scene embedding u by a per-pixel inner product, and the resulting relation
map gates a re-encoded copy of v_i through a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import torch
from torch import nn

from .backbone import LEVELS
from .errors import ConfigError, DimensionError


def conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True))


@dataclass
class RelationSet:
    z: Dict[int, torch.Tensor]
    r: Dict[int, torch.Tensor]
    projected: Dict[int, torch.Tensor]
    u: torch.Tensor


def relation_map(u: torch.Tensor, projected: torch.Tensor) -> torch.Tensor:
    """Inner product of u (B x d_u) with every pixel of projected (B x d_u x H x W)."""
    if u.dim() != 2 or projected.dim() != 4 or u.shape[0] != projected.shape[0] or u.shape[1] != projected.shape[1]:
        raise DimensionError(
            f"scene embedding {tuple(u.shape)} does not match projected features {tuple(projected.shape)}")
    return torch.einsum("bc,bchw->bhw", u, projected).unsqueeze(1)


def enhance(r: torch.Tensor, encoded: torch.Tensor) -> torch.Tensor:
    """Gate encoded features with sigmoid(r), broadcast over channels."""
    if r.dim() != 4 or r.shape[1] != 1:
        raise DimensionError(f"relation map must be B x 1 x H x W, got {tuple(r.shape)}")
    if r.shape[0] != encoded.shape[0] or r.shape[2:] != encoded.shape[2:]:
        raise DimensionError(f"relation map {tuple(r.shape)} not aligned with features {tuple(encoded.shape)}")
    return torch.sigmoid(r) * encoded


class FSRelation(nn.Module):
    def __init__(self, scene_channels: int, in_channels: int, d_u: int = 256, scale_aware: bool = True):
        super().__init__()
        if d_u < 1:
            raise ConfigError("d_u must be at least 1")
        self.d_u = d_u
        self.scale_aware = scale_aware
        self.scene_embed = nn.Conv2d(scene_channels, d_u, 1)
        if scale_aware:
            self.projections = nn.ModuleDict({str(i): conv_bn_relu(in_channels, d_u) for i in LEVELS})
        else:
            self.projections = nn.ModuleDict({"shared": conv_bn_relu(in_channels, d_u)})
        self.encoders = nn.ModuleDict({str(i): conv_bn_relu(in_channels, in_channels) for i in LEVELS})

    def project(self, v: torch.Tensor, level: int) -> torch.Tensor:
        if level not in LEVELS:
            raise ConfigError(f"unknown pyramid level {level}")
        key = str(level) if self.scale_aware else "shared"
        return self.projections[key](v)

    def embed_scene(self, c6: torch.Tensor) -> torch.Tensor:
        if c6.dim() != 2 or c6.shape[1] != self.scene_embed.in_channels:
            raise DimensionError(
                f"scene vector must be B x {self.scene_embed.in_channels}, got {tuple(c6.shape)}")
        return self.scene_embed(c6[:, :, None, None]).flatten(1)

    def encode(self, v: torch.Tensor, level: int) -> torch.Tensor:
        if level not in LEVELS:
            raise ConfigError(f"unknown pyramid level {level}")
        return self.encoders[str(level)](v)

    def forward(self, pyramid: Dict[int, torch.Tensor], c6: torch.Tensor) -> RelationSet:
        missing = [i for i in LEVELS if i not in pyramid]
        if missing:
            raise DimensionError(f"missing pyramid levels {missing}")
        u = self.embed_scene(c6)
        out = RelationSet(z={}, r={}, projected={}, u=u)
        for i in LEVELS:
            v = pyramid[i]
            projected = self.project(v, i)
            r = relation_map(u, projected)
            out.projected[i] = projected
            out.r[i] = r
            out.z[i] = enhance(r, self.encode(v, i))
        return out
