"""Training loop: momentum SGD, poly learning rate, foreground-aware loss."""
from __future__ import annotations

import json
import logging
import os
import random
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import ExperimentConfig, save_config
from .data.augment import apply_transform, draw_transform
from .data.io import load_dataset
from .data.sample import LabeledSample
from .data.synth import SynthConfig, synth_generate
from .data.tiling import pad_to_window, tile
from .errors import DataError, NumericError
from .inference import predict_probs, read_checkpoint, save_checkpoint, to_tensor
from .loss import fa_loss
from .metrics import ConfusionMatrix
from .model import FarSeg

log = logging.getLogger(__name__)

DETERMINISTIC_ENV = "FARSEG_DETERMINISTIC"
VAL_SEED_OFFSET = 104729


def poly_lr(step: int, initial_lr: float, max_step: int, power: float = 0.9) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > max_step:
        warnings.warn(f"step {step} exceeds max_step {max_step}; learning rate clamped to 0")
        return 0.0
    return initial_lr * (1.0 - step / max_step) ** power


def deterministic_requested(cfg_value: bool) -> bool:
    env = os.environ.get(DETERMINISTIC_ENV)
    if env is None:
        return cfg_value
    return env.strip().lower() not in ("0", "false", "no", "")


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)


def make_tiles(samples: Sequence[LabeledSample], window: int, stride: int,
               ignore_label: int = 255) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Cut every sample into window x window crops (done once, before training)."""
    tiles = []
    for s in samples:
        image, _ = pad_to_window(s.image, window)
        mask = s.mask
        if mask.shape != image.shape[:2]:
            mask = np.full(image.shape[:2], ignore_label, dtype=np.uint8)
            mask[:s.mask.shape[0], :s.mask.shape[1]] = s.mask
        for sl in tile(image.shape[:2], window, stride).slices():
            tiles.append((image[sl], mask[sl]))
    return tiles


def load_samples(cfg: ExperimentConfig) -> Tuple[List[LabeledSample], List[LabeledSample]]:
    data = cfg.data
    if data.source == "synth":
        train = synth_generate(data.synth)
        val = []
        if data.val_images:
            val_cfg = SynthConfig(**{**data.synth.__dict__, "num_images": data.val_images,
                                     "seed": data.synth.seed + VAL_SEED_OFFSET})
            val = synth_generate(val_cfg)
        return train, val
    train, _ = load_dataset(data.train_dir, cfg.model.num_classes, ignore_label=data.ignore_label)
    val = []
    if data.val_dir:
        val, _ = load_dataset(data.val_dir, cfg.model.num_classes, ignore_label=data.ignore_label)
    if not train:
        raise DataError(f"no training samples under {data.train_dir}")
    return train, val


class BatchSampler:
    """Batches as a pure function of the step: epoch permutations drawn from (seed, epoch)."""

    def __init__(self, tiles, batch_size: int, seed: int, augment: bool, single_batch: bool = False):
        if not tiles:
            raise DataError("empty training set")
        self.tiles = tiles
        self.batch_size = batch_size
        self.seed = seed
        self.augment = augment
        self.single_batch = single_batch

    def indices(self, step: int) -> List[Tuple[int, int]]:
        n = len(self.tiles)
        if self.single_batch:
            return [(0, j % n) for j in range(self.batch_size)]
        out = []
        for j in range(self.batch_size):
            pos = step * self.batch_size + j
            epoch = pos // n
            perm = np.random.default_rng([self.seed, epoch]).permutation(n)
            out.append((epoch, int(perm[pos % n])))
        return out

    def batch(self, step: int) -> Tuple[torch.Tensor, torch.Tensor]:
        images, masks = [], []
        for epoch, idx in self.indices(step):
            image, mask = self.tiles[idx]
            if self.augment and not self.single_batch:
                name = draw_transform(self.seed, epoch, idx)
                image, mask = apply_transform(image, name), apply_transform(mask, name)
            images.append(image)
            masks.append(mask)
        return to_tensor(np.stack(images)), torch.from_numpy(np.stack(masks).astype(np.int64))


def evaluate(model, samples: Sequence[LabeledSample], num_classes: int, window: int, stride: int,
             ignore_label: int = 255) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes, ignore_label)
    for s in samples:
        probs = predict_probs(model, s.image, window, stride)
        cm.accumulate(probs.argmax(0), s.mask)
    return cm


@dataclass
class TrainResult:
    log: List[dict] = field(default_factory=list)
    val: List[dict] = field(default_factory=list)
    out_dir: Optional[Path] = None
    final_step: int = 0
    best_miou: Optional[float] = None


class Trainer:
    def __init__(self, cfg: ExperimentConfig, out_dir=None, train_samples=None, val_samples=None,
                 single_batch: bool = False, write_files: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.deterministic = deterministic_requested(cfg.deterministic)
        seed_everything(cfg.seed, self.deterministic)
        self.out_dir = Path(out_dir or cfg.out_dir)
        self.write_files = write_files
        if train_samples is None:
            train_samples, loaded_val = load_samples(cfg)
            if val_samples is None:
                val_samples = loaded_val
        self.val_samples = list(val_samples or [])
        tiles = make_tiles(train_samples, cfg.data.window, cfg.data.stride, cfg.data.ignore_label)
        self.sampler = BatchSampler(tiles, cfg.data.batch_size, cfg.seed, cfg.data.augment, single_batch)
        self.model = FarSeg(cfg.model)
        o = cfg.optim
        self.optimizer = torch.optim.SGD(self.model.parameters(), lr=o.initial_lr, momentum=o.momentum,
                                         weight_decay=o.weight_decay)
        self.step = 0
        self.best_miou: Optional[float] = None
        if write_files:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            save_config(cfg, self.out_dir / "config.yaml")

    @classmethod
    def resume(cls, checkpoint, out_dir=None, train_samples=None, val_samples=None, **kwargs) -> "Trainer":
        payload = read_checkpoint(checkpoint)
        cfg = payload["config_obj"]
        trainer = cls(cfg, out_dir or Path(checkpoint).parent, train_samples, val_samples, **kwargs)
        trainer.model.load_state_dict(payload["model"])
        trainer.optimizer.load_state_dict(payload["optimizer"])
        trainer.step = payload["step"]
        trainer.best_miou = payload.get("best_miou")
        return trainer

    def _dump_nonfinite(self, step, logits, labels, breakdown) -> Path:
        stats = {
            "step": step,
            "logits_finite_fraction": float(torch.isfinite(logits).float().mean()),
            "logits_abs_max": float(logits.detach().abs().nan_to_num(posinf=1e38).max()),
            "label_histogram": {int(k): int(v) for k, v in zip(*np.unique(labels.numpy(), return_counts=True))},
            "z": breakdown.z_value,
            "zeta": breakdown.zeta,
            "ce_finite": bool(torch.isfinite(breakdown.ce).all()),
        }
        path = self.out_dir / f"nonfinite_step{step}.json"
        if self.write_files:
            path.write_text(json.dumps(stats, indent=2))
        return path

    def train_step(self) -> dict:
        cfg = self.cfg
        step = self.step
        lr = poly_lr(step, cfg.optim.initial_lr, cfg.optim.max_step, cfg.optim.power)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        images, labels = self.sampler.batch(step)
        self.optimizer.zero_grad(set_to_none=True)
        chunks = cfg.optim.grad_accum
        total, z_vals, zeta = 0.0, [], 0.0
        cm = ConfusionMatrix(cfg.model.num_classes, cfg.data.ignore_label)
        for img_chunk, lbl_chunk in zip(images.chunk(chunks), labels.chunk(chunks)):
            logits = self.model(img_chunk)
            out = fa_loss(logits, lbl_chunk, cfg.loss, step)
            if not torch.isfinite(out.total):
                path = self._dump_nonfinite(step, logits, lbl_chunk, out)
                raise NumericError(f"non-finite loss at step {step}; batch statistics written to {path}")
            (out.total * img_chunk.shape[0] / images.shape[0]).backward()
            total += out.total.item() * img_chunk.shape[0] / images.shape[0]
            z_vals.append(out.z_value)
            zeta = out.zeta
            cm.accumulate(logits.detach().argmax(1).numpy(), lbl_chunk.numpy())
        self.optimizer.step()
        self.step += 1
        return {"step": step, "loss": total, "zeta": zeta, "z": float(np.mean(z_vals)), "lr": lr,
                "batch_miou": cm.mean_iou()}

    def validate(self) -> Optional[dict]:
        if not self.val_samples:
            return None
        cfg = self.cfg
        t0 = time.perf_counter()
        cm = evaluate(self.model, self.val_samples, cfg.model.num_classes, cfg.data.window, cfg.data.stride,
                      cfg.data.ignore_label)
        rep = cm.report()
        rep["step"] = self.step
        rep["images_per_second"] = len(self.val_samples) / max(1e-9, time.perf_counter() - t0)
        return rep

    def save(self, name: str) -> Path:
        path = self.out_dir / name
        save_checkpoint(path, self.model, self.optimizer, self.step, self.cfg, best_miou=self.best_miou)
        return path

    def run(self, max_steps: Optional[int] = None, validate: bool = True) -> TrainResult:
        """Train until ``max_steps`` total steps (default: optim.max_step)."""
        cfg = self.cfg
        stop = min(cfg.optim.max_step, max_steps if max_steps is not None else cfg.optim.max_step)
        result = TrainResult(out_dir=self.out_dir)
        log_fh = open(self.out_dir / "train_log.jsonl", "a") if self.write_files else None
        try:
            while self.step < stop:
                entry = self.train_step()
                if entry["step"] % cfg.log_every == 0 or self.step == stop:
                    result.log.append(entry)
                    if log_fh:
                        log_fh.write(json.dumps(entry) + "\n")
                        log_fh.flush()
                    log.info("step %d loss %.5f zeta %.4f Z %.4f lr %.6f", entry["step"], entry["loss"],
                             entry["zeta"], entry["z"], entry["lr"])
                at_val = self.step % cfg.validation_interval == 0 or self.step == cfg.optim.max_step
                if validate and at_val:
                    rep = self.validate()
                    if rep is not None:
                        result.val.append(rep)
                        if log_fh:
                            log_fh.write(json.dumps({"validation": rep}) + "\n")
                        miou = rep["miou"]
                        if miou is not None and (self.best_miou is None or miou > self.best_miou):
                            self.best_miou = miou
                            if self.write_files:
                                self.save("best.pt")
                if self.write_files and (self.step % cfg.checkpoint_interval == 0 or self.step == stop):
                    self.save(f"step_{self.step:07d}.pt")
                    self.save("last.pt")
        finally:
            if log_fh:
                log_fh.close()
        result.final_step = self.step
        result.best_miou = self.best_miou
        return result


def train(cfg: ExperimentConfig, out_dir=None, **kwargs) -> TrainResult:
    return Trainer(cfg, out_dir, **kwargs).run()
