"""Foreground-aware optimization loss.

Per-pixel cross entropy l_i is reweighted by

    m_i = w_i / Z + zeta(t) * (1 - w_i / Z),   w_i = (1 - p_i) ** gamma

where p_i is the softmax probability of the true class and Z rescales the
focal weights so that sum(w_i * l_i) / Z == sum(l_i) over the mini-batch.
zeta(t) anneals from 1 (plain cross entropy) to 0 (normalized focal).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError

ANNEALING_KINDS = ("linear", "poly", "cosine", "none")
Z_EPS = 1e-12


@dataclass
class FaLossConfig:
    gamma: float = 2.0
    annealing: str = "cosine"
    annealing_step: int = 10000
    decay_factor: float = 0.9
    normalize: bool = True
    ignore_label: Optional[int] = 255

    def validate(self) -> None:
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.annealing not in ANNEALING_KINDS:
            raise ConfigError(f"annealing must be one of {ANNEALING_KINDS}, got {self.annealing!r}")
        if int(self.annealing_step) != self.annealing_step or self.annealing_step < 1:
            raise ConfigError(f"annealing_step must be a positive integer, got {self.annealing_step}")
        if self.decay_factor <= 0:
            raise ConfigError(f"decay_factor must be positive, got {self.decay_factor}")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    per_pixel: torch.Tensor  # m_i * l_i, zero on ignored pixels
    weights: torch.Tensor  # m_i
    ce: torch.Tensor  # l_i
    valid: torch.Tensor
    z_value: float
    zeta: float


def valid_mask(labels: torch.Tensor, ignore_label: Optional[int]) -> torch.Tensor:
    if ignore_label is None:
        return torch.ones_like(labels, dtype=torch.bool)
    return labels != ignore_label


def per_pixel_ce(logits: torch.Tensor, labels: torch.Tensor,
                 ignore_label: Optional[int] = 255) -> Tuple[torch.Tensor, torch.Tensor]:
    """Return (cross entropy, true-class probability) per pixel; both 0 on ignored pixels."""
    if logits.dim() != 4 or labels.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise DataError(f"labels {tuple(labels.shape)} do not match logits {tuple(logits.shape)}")
    num_classes = logits.shape[1]
    valid = valid_mask(labels, ignore_label)
    bad = valid & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        b, y, x = (int(v) for v in bad.nonzero()[0])
        raise DataError(f"label {int(labels[b, y, x])} at (batch={b}, y={y}, x={x}) "
                        f"is outside [0, {num_classes})")
    target = torch.where(valid, labels, torch.zeros_like(labels)).long()
    logp = F.log_softmax(logits, dim=1).gather(1, target.unsqueeze(1)).squeeze(1)
    zero = torch.zeros((), dtype=logp.dtype, device=logp.device)
    ce = torch.where(valid, -logp, zero)
    p_true = torch.where(valid, logp.exp(), zero)
    return ce, p_true


def focal_weight(p_true: torch.Tensor, gamma: float) -> torch.Tensor:
    return (1.0 - p_true).clamp_min(0.0) ** gamma


def normalization_constant(w: torch.Tensor, ce: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Z = sum(w * l) / sum(l) over valid pixels, detached; 1 when sum(l) is negligible."""
    if valid is None:
        valid = torch.ones_like(ce, dtype=torch.bool)
    if not valid.any():
        raise DataError("every pixel in the batch is ignored; cannot normalize the loss")
    with torch.no_grad():
        ce_sum = ce[valid].sum()
        if ce_sum < Z_EPS:
            return torch.ones((), dtype=ce.dtype, device=ce.device)
        return (w[valid] * ce[valid]).sum() / ce_sum


def annealing(t: float, cfg: FaLossConfig) -> float:
    """Annealing factor in [0, 1]; clamped to 0 once t reaches annealing_step."""
    if t < 0:
        raise ValueError(f"training step must be non-negative, got {t}")
    if cfg.annealing == "none":
        return 0.0
    frac = min(float(t), float(cfg.annealing_step)) / cfg.annealing_step
    if cfg.annealing == "linear":
        return 1.0 - frac
    if cfg.annealing == "poly":
        return (1.0 - frac) ** cfg.decay_factor
    if cfg.annealing == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * frac))
    raise ConfigError(f"unknown annealing kind {cfg.annealing!r}")


def fa_loss(logits: torch.Tensor, labels: torch.Tensor, cfg: FaLossConfig, t: float,
            z: Optional[torch.Tensor] = None) -> LossBreakdown:
    """Foreground-aware loss at training step t.

    ``z`` pins the normalization constant instead of recomputing it from the
    batch; gradient checks use it to hold Z fixed under perturbation.
    """
    ce, p_true = per_pixel_ce(logits, labels, cfg.ignore_label)
    valid = valid_mask(labels, cfg.ignore_label)
    count = int(valid.sum())
    if count == 0:
        raise DataError("every pixel in the batch is ignored")
    w = focal_weight(p_true, cfg.gamma)
    if z is None:
        z = normalization_constant(w, ce, valid) if cfg.normalize else torch.ones((), dtype=ce.dtype)
    zeta = annealing(t, cfg)
    scaled = w / z
    m = scaled + zeta * (1.0 - scaled)
    m = torch.where(valid, m, torch.zeros_like(m))
    per_pixel = m * ce
    total = per_pixel.sum() / count
    return LossBreakdown(total=total, per_pixel=per_pixel, weights=m, ce=ce, valid=valid,
                         z_value=float(z), zeta=zeta)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor, ignore_label: Optional[int] = 255) -> torch.Tensor:
    """Plain mean cross entropy over non-ignored pixels."""
    ce, _ = per_pixel_ce(logits, labels, ignore_label)
    valid = valid_mask(labels, ignore_label)
    return ce.sum() / valid.sum()
