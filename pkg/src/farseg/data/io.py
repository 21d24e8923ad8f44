"""Dataset directories: images/ and masks/ with matching file stems."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from ..errors import DataError
from .sample import LabeledSample

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp")
IGNORE_LABEL = 255
ISAID_NUM_CLASSES = 16


@dataclass
class LoadReport:
    loaded: List[str] = field(default_factory=list)
    missing_masks: List[str] = field(default_factory=list)
    orphan_masks: List[str] = field(default_factory=list)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I;16", "I"):
            raise DataError(f"{path}: mask must be single-channel, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.max(initial=0) > 255:
        raise DataError(f"{path}: mask values exceed 8 bits")
    return arr.astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(path)


def _index(folder: Path) -> Dict[str, Path]:
    if not folder.is_dir():
        return {}
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def check_mask(mask: np.ndarray, num_classes: int, source: str, ignore_label: int = IGNORE_LABEL) -> None:
    bad = (mask >= num_classes) & (mask != ignore_label)
    if bad.any():
        y, x = (int(v) for v in np.argwhere(bad)[0])
        raise DataError(f"{source}: label {int(mask[y, x])} at (y={y}, x={x}) is not a valid class "
                        f"for K={num_classes}")


def load_dataset(root, num_classes: int, strict: bool = False,
                 ignore_label: int = IGNORE_LABEL) -> Tuple[List[LabeledSample], LoadReport]:
    """Load image/mask pairs from ``root/images`` and ``root/masks``."""
    root = Path(root)
    images, masks = _index(root / "images"), _index(root / "masks")
    report = LoadReport()
    report.missing_masks = sorted(set(images) - set(masks))
    report.orphan_masks = sorted(set(masks) - set(images))
    if report.missing_masks:
        msg = f"{len(report.missing_masks)} image(s) without mask under {root}: {report.missing_masks[:5]}"
        if strict:
            raise DataError(msg)
        log.warning(msg)
    samples = []
    for stem in sorted(set(images) & set(masks)):
        image, mask = read_image(images[stem]), read_mask(masks[stem])
        if mask.shape != image.shape[:2]:
            raise DataError(f"{masks[stem]}: mask size {mask.shape} differs from image {image.shape[:2]}")
        check_mask(mask, num_classes, str(masks[stem]), ignore_label)
        samples.append(LabeledSample(image, mask, stem))
        report.loaded.append(stem)
    if not samples:
        log.warning("no samples found under %s", root)
    return samples, report


def load_isaid(root, strict: bool = False):
    """Load a prepared iSAID semantic dataset (15 categories + background)."""
    return load_dataset(root, ISAID_NUM_CLASSES, strict=strict)


def save_dataset(root, samples: List[LabeledSample], manifest: Optional[dict] = None) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(root / "images" / f"{s.name}.png", s.image)
        write_mask(root / "masks" / f"{s.name}.png", s.mask)
    if manifest is not None:
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def isaid_palette() -> dict:
    text = resources.files("farseg.data").joinpath("isaid_palette.json").read_text()
    return json.loads(text)


def convert_color_mask(rgb: np.ndarray, palette: Optional[dict] = None, source: str = "mask") -> np.ndarray:
    """Map an H x W x 3 colour-coded mask to class ids; unknown colours are an error."""
    palette = palette or isaid_palette()
    lut = {tuple(c["rgb"]): c["id"] for c in palette["classes"]}
    rgb = np.asarray(rgb)[..., :3].astype(np.int64)
    codes = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.full(codes.shape, palette.get("ignore_label", IGNORE_LABEL), dtype=np.uint8)
    known = np.zeros(codes.shape, dtype=bool)
    for (r, g, b), cid in lut.items():
        hit = codes == ((r << 16) | (g << 8) | b)
        out[hit] = cid
        known |= hit
    if not known.all():
        y, x = (int(v) for v in np.argwhere(~known)[0])
        triple = tuple(int(v) for v in rgb[y, x])
        raise DataError(f"{source}: unknown colour RGB{triple} at (y={y}, x={x})")
    return out


def convert_isaid(src_root, dst_root, mask_suffix: str = "_instance_color_RGB") -> LoadReport:
    """Convert ``src/images`` + colour masks in ``src/masks`` into an id-mask dataset.

    Colour masks may carry the iSAID suffix after the image stem.
    """
    src_root, dst_root = Path(src_root), Path(dst_root)
    palette = isaid_palette()
    images = _index(src_root / "images")
    masks = {stem[:-len(mask_suffix)] if stem.endswith(mask_suffix) else stem: p
             for stem, p in _index(src_root / "masks").items()}
    report = LoadReport(missing_masks=sorted(set(images) - set(masks)))
    (dst_root / "images").mkdir(parents=True, exist_ok=True)
    (dst_root / "masks").mkdir(parents=True, exist_ok=True)
    for stem in sorted(set(images) & set(masks)):
        image = read_image(images[stem])
        ids = convert_color_mask(read_image(masks[stem]), palette, str(masks[stem]))
        if ids.shape != image.shape[:2]:
            raise DataError(f"{masks[stem]}: size {ids.shape} differs from image {image.shape[:2]}")
        write_image(dst_root / "images" / f"{stem}.png", image)
        write_mask(dst_root / "masks" / f"{stem}.png", ids)
        report.loaded.append(stem)
    (dst_root / "manifest.json").write_text(json.dumps({"source": str(src_root), "report": asdict(report)},
                                                       indent=2, sort_keys=True))
    return report
