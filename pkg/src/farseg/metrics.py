"""Confusion-matrix IoU / mIoU and foreground-ratio diagnostics."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from .errors import DataError

IGNORE_LABEL = 255


class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int, ignore_label: Optional[int] = IGNORE_LABEL):
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise DataError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        keep = np.ones(gt.shape, dtype=bool) if self.ignore_label is None else gt != self.ignore_label
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        k = self.num_classes
        if g.size and (g.min() < 0 or g.max() >= k or p.min() < 0 or p.max() >= k):
            raise DataError(f"labels outside [0, {k}) in evaluation input")
        self.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DataError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.num_classes, self.ignore_label)
        out.counts = self.counts + other.counts
        return out

    __add__ = merge

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def iou_per_class(self) -> np.ndarray:
        """Per-class IoU; NaN marks classes absent from both prediction and ground truth."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - tp
        iou = np.full(self.num_classes, np.nan)
        defined = union > 0
        iou[defined] = tp[defined] / union[defined]
        return iou

    def mean_iou(self, include_background: bool = True) -> float:
        iou = self.iou_per_class()
        if not include_background:
            iou = iou[1:]
        defined = iou[~np.isnan(iou)]
        if defined.size == 0:
            raise DataError("no class has a non-empty union; mIoU is undefined")
        return float(defined.mean())

    def report(self, class_names: Optional[List[str]] = None) -> dict:
        iou = self.iou_per_class()
        names = class_names or [str(i) for i in range(self.num_classes)]
        gt_pixels = self.counts.sum(1)

        def _safe(include):
            try:
                return self.mean_iou(include)
            except DataError:
                return None

        return {
            "num_classes": self.num_classes,
            "iou": {n: (None if np.isnan(v) else float(v)) for n, v in zip(names, iou)},
            "undefined_classes": [n for n, v in zip(names, iou) if np.isnan(v)],
            "miou": _safe(True),
            "miou_foreground": _safe(False),
            "pixels": int(self.total),
            "gt_pixels_per_class": {n: int(c) for n, c in zip(names, gt_pixels)},
            "foreground_ratio": float(gt_pixels[1:].sum() / max(1, self.total)),
        }


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    return cm.iou_per_class()


def mean_iou(cm: ConfusionMatrix, include_background: bool = True) -> float:
    return cm.mean_iou(include_background)


def foreground_ratio(masks: Iterable[np.ndarray], ignore_label: Optional[int] = IGNORE_LABEL) -> Dict[str, object]:
    """Fraction of non-background, non-ignored pixels per mask and over all masks."""
    per_image, fg_total, px_total = [], 0, 0
    for mask in masks:
        mask = np.asarray(mask)
        valid = mask != ignore_label if ignore_label is not None else np.ones(mask.shape, bool)
        n = int(valid.sum())
        fg = int(((mask != 0) & valid).sum())
        per_image.append(fg / n if n else 0.0)
        fg_total += fg
        px_total += n
    return {"per_image": per_image, "aggregate": fg_total / px_total if px_total else 0.0}


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))


def write_per_image_csv(path, rows: List[dict], num_classes: int) -> None:
    fields = ["image", "miou"] + [f"iou_{k}" for k in range(num_classes)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def per_image_row(name: str, pred, gt, num_classes: int, ignore_label=IGNORE_LABEL) -> dict:
    cm = ConfusionMatrix(num_classes, ignore_label).accumulate(pred, gt)
    iou = cm.iou_per_class()
    row = {"image": name, "miou": cm.mean_iou() if not np.isnan(iou).all() else ""}
    row.update({f"iou_{k}": ("" if np.isnan(v) else float(v)) for k, v in enumerate(iou)})
    return row
