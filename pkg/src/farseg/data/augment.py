"""Flip / 90-degree rotation augmentation applied identically to image and mask."""
from __future__ import annotations

from typing import Tuple

import numpy as np

# (quarter turns, horizontal flip afterwards); covers the 8 symmetries of the square
TRANSFORMS = {
    "identity": (0, False),
    "rot90": (1, False),
    "rot180": (2, False),
    "rot270": (3, False),
    "hflip": (0, True),
    "rot90_hflip": (1, True),
    "vflip": (2, True),
    "rot270_hflip": (3, True),
}
TRANSFORM_NAMES = tuple(TRANSFORMS)


def apply_transform(array: np.ndarray, name: str) -> np.ndarray:
    """Apply a named transform to an H x W (x C) array."""
    turns, flip = TRANSFORMS[name]
    out = np.rot90(array, k=turns, axes=(0, 1))
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def hflip(array: np.ndarray) -> np.ndarray:
    return apply_transform(array, "hflip")


def vflip(array: np.ndarray) -> np.ndarray:
    return apply_transform(array, "vflip")


def rot90(array: np.ndarray) -> np.ndarray:
    return apply_transform(array, "rot90")


def draw_transform(seed: int, epoch: int = 0, index: int = 0) -> str:
    """Pick a transform uniformly; a pure function of (seed, epoch, index)."""
    rng = np.random.default_rng([seed, epoch, index])
    return TRANSFORM_NAMES[int(rng.integers(len(TRANSFORM_NAMES)))]


def augment(image: np.ndarray, mask: np.ndarray, seed: int, epoch: int = 0,
            index: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    name = draw_transform(seed, epoch, index)
    return apply_transform(image, name), apply_transform(mask, name)
