from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LabeledSample:
    image: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W uint8 class ids, 255 = ignore
    name: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"mask {self.mask.shape} does not match image {self.image.shape[:2]}")
