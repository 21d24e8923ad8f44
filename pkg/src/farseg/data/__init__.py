from .augment import augment, apply_transform, draw_transform
from .io import load_dataset, load_isaid, save_dataset
from .sample import LabeledSample
from .synth import SynthConfig, synth_generate
from .tiling import TileGrid, pad_to_window, stitch, tile

__all__ = [
    "LabeledSample", "SynthConfig", "TileGrid", "apply_transform", "augment", "draw_transform",
    "load_dataset", "load_isaid", "pad_to_window", "save_dataset", "stitch", "synth_generate", "tile",
]
