"""Tiled prediction, checkpoint loading and relation heatmaps."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import LEVELS
from .config import ExperimentConfig, make_config
from .data.tiling import pad_to_window, stitch, tile
from .errors import ConfigError, DataError
from .model import FarSeg

MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32) * 255
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32) * 255

CHECKPOINT_FORMAT = "farseg-checkpoint"
CHECKPOINT_VERSION = (1, 0)


def to_tensor(images: np.ndarray) -> torch.Tensor:
    """uint8 H x W x 3 (or N x H x W x 3) -> normalized float N x 3 x H x W."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    arr = (arr - MEAN) / STD
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def save_checkpoint(path, model, optimizer, step: int, cfg: ExperimentConfig, **extra) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
    }
    payload.update(extra)
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a FarSeg checkpoint")
    major = tuple(payload.get("version", (0, 0)))[0]
    if major != CHECKPOINT_VERSION[0]:
        raise ConfigError(f"{path}: checkpoint major version {major} is not supported")
    cfg = make_config(payload["config"], profile=None)
    if cfg.config_hash() != payload["config_hash"]:
        raise ConfigError(f"{path}: stored config does not match its hash")
    payload["config_obj"] = cfg
    return payload


def load_model(path, num_classes: Optional[int] = None) -> Tuple[FarSeg, ExperimentConfig]:
    payload = read_checkpoint(path)
    cfg = payload["config_obj"]
    if num_classes is not None and num_classes != cfg.model.num_classes:
        raise ConfigError(f"{path} was trained with {cfg.model.num_classes} classes, requested {num_classes}")
    model = FarSeg(cfg.model)
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise ConfigError(f"{path}: parameters do not match the stored model config: {exc}") from exc
    model.eval()
    return model, cfg


@torch.no_grad()
def predict_probs(model, image: np.ndarray, window: int, stride: int, batch_size: int = 4) -> np.ndarray:
    """Softmax probabilities (K x H x W) for an arbitrary-size image via sliding windows."""
    if window % 32:
        raise ConfigError("window must be a multiple of 32")
    model.eval()
    H, W = image.shape[:2]
    padded, _ = pad_to_window(image, window)
    grid = tile(padded.shape[:2], window, stride)
    tiles = []
    origins = list(grid.origins)
    for start in range(0, len(origins), batch_size):
        chunk = origins[start:start + batch_size]
        batch = np.stack([padded[y:y + window, x:x + window] for y, x in chunk])
        probs = torch.softmax(model(to_tensor(batch)), dim=1).numpy()
        tiles.extend(zip(chunk, probs))
    return stitch(tiles, padded.shape[:2])[:, :H, :W]


def predict(model, image: np.ndarray, window: int, stride: int, num_classes: Optional[int] = None):
    probs = predict_probs(model, image, window, stride)
    if num_classes is not None and probs.shape[0] != num_classes:
        raise DataError(f"model predicts {probs.shape[0]} classes, expected {num_classes}")
    return probs.argmax(0).astype(np.uint8), probs


def normalize_heatmap(r: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 255]; a constant map becomes uniform 128."""
    r = np.asarray(r, dtype=np.float64)
    lo, hi = r.min(), r.max()
    if not hi > lo:
        return np.full(r.shape, 128.0)
    return (r - lo) / (hi - lo) * 255.0


@torch.no_grad()
def relation_heatmaps(model, image: np.ndarray) -> Dict[int, np.ndarray]:
    """One uint8 heatmap per output stride (4, 8, 16, 32), resized to the image size."""
    if model.relation is None:
        raise ConfigError("model was built without the relation module")
    model.eval()
    H, W = image.shape[:2]
    ph, pw = -H % 32, -W % 32
    padded = np.pad(image, [(0, ph), (0, pw), (0, 0)], mode="reflect") if ph or pw else image
    out = model(to_tensor(padded), return_intermediates=True)
    maps = {}
    for level in LEVELS:
        r = out["relation"].r[level][0, 0].double().numpy()
        scaled = torch.from_numpy(normalize_heatmap(r))[None, None]
        resized = F.interpolate(scaled, size=padded.shape[:2], mode="bilinear", align_corners=False)
        heat = np.clip(np.rint(resized[0, 0].numpy()), 0, 255).astype(np.uint8)
        maps[2 ** level] = heat[:H, :W]
    return maps


def blend_heatmap(image: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    from matplotlib import colormaps

    colored = colormaps["jet"](heat.astype(np.float64) / 255.0)[..., :3] * 255.0
    mixed = (1 - alpha) * image.astype(np.float64) + alpha * colored
    return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
