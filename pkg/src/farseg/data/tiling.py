"""Sliding-window tiling and probability stitching for large rasters."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ..errors import DataError


def _axis_origins(size: int, window: int, stride: int) -> List[int]:
    if window > size:
        raise DataError(f"window {window} exceeds image size {size}; pad the image first (see pad_to_window)")
    if not 1 <= stride <= window:
        raise DataError(f"stride {stride} must lie in [1, window={window}] for full coverage")
    origins = list(range(0, size - window + 1, stride))
    if origins[-1] + window < size:
        origins.append(size - window)
    return origins


@dataclass(frozen=True)
class TileGrid:
    image_size: Tuple[int, int]
    window: Tuple[int, int]
    stride: int
    origins: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.origins)

    def slices(self):
        h, w = self.window
        for y, x in self.origins:
            yield (slice(y, y + h), slice(x, x + w))

    def coverage(self) -> np.ndarray:
        counts = np.zeros(self.image_size, dtype=np.int32)
        for sl in self.slices():
            counts[sl] += 1
        return counts


def tile(image_size: Sequence[int], window=896, stride: int = 512) -> TileGrid:
    """Window origins every ``stride`` pixels; the last window is shifted inward to the edge."""
    if np.isscalar(window):
        window = (int(window), int(window))
    H, W = (int(v) for v in image_size)
    ys = _axis_origins(H, window[0], stride)
    xs = _axis_origins(W, window[1], stride)
    origins = tuple((y, x) for y in ys for x in xs)
    return TileGrid((H, W), (int(window[0]), int(window[1])), int(stride), origins)


def pad_to_window(image: np.ndarray, window) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Reflect-pad an H x W (x C) array so both sides are at least the window size.

    Returns the padded array and the original (H, W) for cropping back.
    """
    if np.isscalar(window):
        window = (int(window), int(window))
    H, W = image.shape[:2]
    ph, pw = max(0, window[0] - H), max(0, window[1] - W)
    if ph == 0 and pw == 0:
        return image, (H, W)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad, mode="reflect"), (H, W)


def stitch(tile_probs: Iterable[Tuple[Tuple[int, int], np.ndarray]], image_size: Sequence[int]) -> np.ndarray:
    """Average per-tile K x h x w probability maps into one K x H x W map."""
    H, W = (int(v) for v in image_size)
    acc = None
    dtype = np.float32
    counts = np.zeros((H, W), dtype=np.int64)
    for (y, x), probs in tile_probs:
        probs = np.asarray(probs)
        if probs.ndim == 4:
            if probs.shape[0] != 1:
                raise DataError("stitch takes one image at a time")
            probs = probs[0]
        k, h, w = probs.shape
        if acc is None:
            dtype = probs.dtype
            acc = np.zeros((k, H, W), dtype=np.float64)
        acc[:, y:y + h, x:x + w] += probs
        counts[y:y + h, x:x + w] += 1
    if acc is None or (counts == 0).any():
        raise RuntimeError("tile grid leaves pixels uncovered")
    # float64 accumulation keeps float32 averages of equal tiles exact
    return (acc / counts).astype(dtype)
