"""Command line entry point: train, eval, predict, visualize-relation, prepare-data."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DataError, DimensionError, FarSegError

log = logging.getLogger("farseg")


def _read_image(path):
    from .data.io import read_image

    try:
        return read_image(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log every training step.")
def cli(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--profile", default="tiny", show_default=True, help="Base profile when no config file is given.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--max-steps", type=int, default=None, help="Stop early after this many total steps.")
def train(config_path, profile, overrides, out_dir, resume, max_steps):
    """Train a model; logs and checkpoints go to the output directory."""
    from .config import load_config, make_config
    from .train import Trainer

    if resume:
        trainer = Trainer.resume(resume, out_dir)
    else:
        cfg = load_config(config_path, overrides) if config_path else make_config(None, profile, overrides)
        trainer = Trainer(cfg, out_dir)
    result = trainer.run(max_steps)
    summary = {"out_dir": str(trainer.out_dir), "final_step": result.final_step, "best_miou": result.best_miou,
               "last_loss": result.log[-1]["loss"] if result.log else None}
    click.echo(json.dumps(summary))


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--window", type=int, default=None)
@click.option("--stride", type=int, default=None)
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def evaluate_cmd(checkpoint, data_dir, window, stride, report_path, csv_path):
    """Evaluate stitched full-image predictions on a dataset directory."""
    import time

    from .data.io import load_dataset
    from .inference import load_model, predict_probs
    from .metrics import ConfusionMatrix, foreground_ratio, per_image_row, write_per_image_csv, write_report

    model, cfg = load_model(checkpoint)
    window = window or cfg.data.window
    stride = stride or cfg.data.stride
    k = cfg.model.num_classes
    samples, _ = load_dataset(data_dir, k, ignore_label=cfg.data.ignore_label)
    if not samples:
        raise DataError(f"no samples to evaluate under {data_dir}")
    cm = ConfusionMatrix(k, cfg.data.ignore_label)
    rows = []
    t0 = time.perf_counter()
    for s in samples:
        pred = predict_probs(model, s.image, window, stride).argmax(0)
        cm.accumulate(pred, s.mask)
        rows.append(per_image_row(s.name, pred, s.mask, k, cfg.data.ignore_label))
    report = cm.report()
    report["dataset_foreground_ratio"] = foreground_ratio([s.mask for s in samples], cfg.data.ignore_label)
    report["images_per_second"] = len(samples) / max(1e-9, time.perf_counter() - t0)
    if report_path:
        write_report(report_path, report)
    if csv_path:
        write_per_image_csv(csv_path, rows, k)
    click.echo(json.dumps({"miou": report["miou"], "miou_foreground": report["miou_foreground"]}))


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--probs", "probs_path", type=click.Path(dir_okay=False), default=None,
              help="Optional .npy file for the K x H x W probability map.")
@click.option("--window", type=int, default=None)
@click.option("--stride", type=int, default=None)
@click.option("--num-classes", type=int, default=None, help="Fail unless the checkpoint predicts this many classes.")
def predict(checkpoint, image_path, out_path, probs_path, window, stride, num_classes):
    """Predict a label raster for one image."""
    from .data.io import write_mask
    from .inference import load_model, predict as run_predict

    model, cfg = load_model(checkpoint, num_classes)
    image = _read_image(image_path)
    mask, probs = run_predict(model, image, window or cfg.data.window, stride or cfg.data.stride,
                              cfg.model.num_classes)
    write_mask(out_path, mask)
    if probs_path:
        np.save(probs_path, probs.astype(np.float32))
    click.echo(json.dumps({"mask": out_path, "shape": list(mask.shape)}))


@cli.command("visualize-relation")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--blend/--no-blend", default=False, help="Alpha-blend a coloured heatmap over the image.")
@click.option("--alpha", type=float, default=0.5, show_default=True)
def visualize_relation(checkpoint, image_path, out_dir, blend, alpha):
    """Write one relation heatmap per output stride (4, 8, 16, 32)."""
    from .data.io import write_image, write_mask
    from .inference import blend_heatmap, load_model, relation_heatmaps

    model, _ = load_model(checkpoint)
    image = _read_image(image_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    written = []
    for os_, heat in relation_heatmaps(model, image).items():
        path = out / f"{stem}_relation_os{os_}.png"
        if blend:
            write_image(path, blend_heatmap(image, heat, alpha))
        else:
            write_mask(path, heat)
        written.append(str(path))
    click.echo(json.dumps({"written": written}))


@cli.group("prepare-data")
def prepare_data():
    """Create dataset directories (synthetic, converted iSAID, or tiled)."""


@prepare_data.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--num-images", type=int, default=256, show_default=True)
@click.option("--image-size", type=int, default=64, show_default=True)
@click.option("--num-classes", type=int, default=4, show_default=True)
@click.option("--ratio", type=float, default=0.02, show_default=True, help="Target foreground ratio.")
@click.option("--min-scale", type=float, default=3.0, show_default=True)
@click.option("--max-scale", type=float, default=12.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def prepare_synth(out_dir, num_images, image_size, num_classes, ratio, min_scale, max_scale, seed):
    from dataclasses import asdict

    from .data.io import save_dataset
    from .data.synth import SynthConfig, realized_ratio, synth_generate
    from .metrics import foreground_ratio

    cfg = SynthConfig(num_images=num_images, image_size=image_size, num_classes=num_classes,
                      target_foreground_ratio=ratio, scale_range=[min_scale, max_scale], seed=seed)
    samples = synth_generate(cfg)
    hist = np.bincount(np.concatenate([s.mask.ravel() for s in samples]), minlength=num_classes)
    manifest = {
        "config": asdict(cfg),
        "realized_foreground_ratio": realized_ratio(samples),
        "per_image_foreground_ratio": foreground_ratio([s.mask for s in samples])["per_image"],
        "class_pixel_counts": hist[:num_classes].tolist(),
        "files": [s.name for s in samples],
    }
    save_dataset(out_dir, samples, manifest)
    click.echo(json.dumps({"out": out_dir, "realized_foreground_ratio": manifest["realized_foreground_ratio"]}))


@prepare_data.command("isaid-convert")
@click.argument("src", type=click.Path(exists=True, file_okay=False))
@click.argument("dst", type=click.Path(file_okay=False))
def prepare_isaid(src, dst):
    """Convert colour-coded iSAID masks into class-id masks."""
    from .data.io import convert_isaid

    report = convert_isaid(src, dst)
    click.echo(json.dumps({"converted": len(report.loaded), "missing_masks": report.missing_masks}))


@prepare_data.command("tile")
@click.argument("src", type=click.Path(exists=True, file_okay=False))
@click.argument("dst", type=click.Path(file_okay=False))
@click.option("--window", type=int, default=896, show_default=True)
@click.option("--stride", type=int, default=512, show_default=True)
@click.option("--num-classes", type=int, default=16, show_default=True)
def prepare_tile(src, dst, window, stride, num_classes):
    """Cut a dataset directory into fixed-size crops."""
    from .data.io import load_dataset, write_image, write_mask
    from .data.tiling import pad_to_window, tile

    samples, _ = load_dataset(src, num_classes)
    dst = Path(dst)
    (dst / "images").mkdir(parents=True, exist_ok=True)
    (dst / "masks").mkdir(parents=True, exist_ok=True)
    files = []
    for s in samples:
        image, (h, w) = pad_to_window(s.image, window)
        mask = np.full(image.shape[:2], 255, dtype=np.uint8)
        mask[:h, :w] = s.mask
        grid = tile(image.shape[:2], window, stride)
        for (y, x), sl in zip(grid.origins, grid.slices()):
            name = f"{s.name}_y{y}_x{x}"
            write_image(dst / "images" / f"{name}.png", image[sl])
            write_mask(dst / "masks" / f"{name}.png", mask[sl])
            files.append(name)
    manifest = {"source": str(src), "window": window, "stride": stride, "tiles": files}
    (dst / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(json.dumps({"tiles": len(files)}))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except FarSegError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except DimensionError as exc:
        click.echo(f"error: {exc}", err=True)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
